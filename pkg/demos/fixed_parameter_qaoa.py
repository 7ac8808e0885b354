"""
QAOA with a fixed parameter count
=================================

Depth grows while the number of trained parameters stays at 2k, because the
layer angles are read from a small smooth schedule.
"""

import numpy as np

from qptrack import qaoa

rng = np.random.default_rng(0)
q, ising = qaoa.random_instance(2, 3, rng)
print("variables:", q.n_var)

print("warm start ramp, p=4:", np.round(qaoa.evaluate_schedule(qaoa.warm_start(3, p=4)), 4))

# each depth may also start from the schedule found at the previous one;
# with only 60 COBYLA steps the deepest circuit need not come out best
prev = None
for p in (1, 2, 4, 8):
    res = qaoa.optimize(ising, p=p, k=3, cfg=qaoa.OptimizerConfig(maxiter=60, shots=0), init=prev)
    prev = res.schedule
    print(f"p={p}  params={res.n_params}  <H>={res.expectation:.4f}  from {res.initial_expectation:.4f}")

rows = qaoa.fpc_sensitivity_sweep(q, [2, 3], [1, 2, 4], [0])
for r in rows:
    print(r)
