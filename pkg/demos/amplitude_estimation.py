"""
Bayesian amplitude estimation
=============================

Estimating a small amplitude with a grid posterior over Grover-amplified shots.
"""

import numpy as np

from qptrack import biqae

cfg = biqae.BiqaeConfig(max_iterations=6, shots=300)
print("schedule:", cfg)

for a in (0.1, 0.3, 0.5):
    rows = biqae.sweep([a], range(20), cfg)
    err = np.median([r["abs_error"] for r in rows])
    cover = np.mean([r["covered"] for r in rows])
    width = np.median([r["ci_hi"] - r["ci_lo"] for r in rows])
    print(f"a={a}  median |err|={err:.1e}  coverage={cover:.2f}  median width={width:.1e}  "
          f"queries={rows[0]['oracle_queries']}")

# the error grows with sin(2 theta), so it is largest around a = 0.5, not at the edges
