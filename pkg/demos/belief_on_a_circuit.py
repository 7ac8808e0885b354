"""
Tiger beliefs on a quantum circuit
==================================

A listening step of the two-door Tiger problem, computed classically and by
post-selecting a small state-preparation circuit, then boosted with Grover.
"""

import math

import numpy as np

from qptrack import pomdp
from qptrack import belief_quantum as bq

model = pomdp.tiger2()
prior = [0.97, 0.03]

# classical Bayes filter
post, evidence = pomdp.belief_update(model, prior, "listen", "hear-right")
print("classical posterior", np.round(post, 4), "evidence", round(evidence, 4))

# the same update read off a two-qubit circuit
circ = bq.build_minimal_tiger_circuit(prior)
qpost, qev = circ.posterior(1)
print("circuit posterior  ", np.round(qpost, 4), "evidence", round(qev, 4))

# the rare observation is a small marked amplitude, so amplify it
setup = bq.grover_setup_for(circ, 1)
theta = math.asin(math.sqrt(qev))
for k in range(4):
    p = setup.success_probability(k)
    print(f"k={k}  P(marked)={p:.4f}  sin^2 law={math.sin((2 * k + 1) * theta) ** 2:.4f}")
print("suggested iterations:", bq.optimal_iterations(qev))

# amplification leaves the conditional distribution alone
for k in range(3):
    amp, _ = bq.amplified_posterior(prior, 1, k, model)
    print(f"posterior after {k} rounds", np.round(amp, 6))

# closed loop with the circuit as the belief provider
records = pomdp.run_closed_loop(model, [0, 0, 0, 1, 1, 1, 0, 0],
                                provider=bq.QuantumBeliefProvider())
for r in records:
    print(r.t, model.actions[r.action], np.round(r.prior, 3), f"hellinger={r.hellinger:.1e}")

# the four-state corridor needs three qubits
corridor = bq.build_corridor4_circuit([0.25] * 4)
print("corridor posterior", np.round(corridor.posterior(0)[0], 4))
