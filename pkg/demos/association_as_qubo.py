"""
Measurement association as a QUBO
=================================

A small track-to-measurement problem built as a cost matrix, turned into a QUBO
and an Ising model, and solved by brute force, Hungarian and greedy assignment.
"""

import numpy as np

from qptrack import mtda, solvers

rng = np.random.default_rng(3)
cost = mtda.random_cost_matrix(2, 3, rng)
print("costs (nan = gated out)\n", np.round(cost.c, 3))

q = mtda.build_qubo(cost)
print("variables:", q.n_var, "penalty:", round(q.penalty, 3))

best = solvers.brute_force_qubo(q)
print("brute-force bits", best.bits, "feasible", mtda.is_feasible(q, best.bits))
print("QUBO objective   ", round(mtda.objective_part(q, best.bits), 6))
print("Hungarian        ", round(solvers.hungarian_solve(cost).objective, 6))
print("greedy           ", round(solvers.gnn_solve(cost).objective, 6))

# the Ising diagonal is the QUBO energy on every bitstring
ising = mtda.to_ising(q)
gap = np.abs(ising.diagonal() - q.energies(mtda.all_bitstrings(q.n_var))).max()
print("Ising/QUBO gap", gap)

# size of the encoding as the problem grows
for N, M in [(2, 3), (5, 8), (10, 15), (20, 30)]:
    print(N, M, mtda.nominal_n_var(N, M), mtda.reference_nonzero_formula(N, M))
