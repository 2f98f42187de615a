"""
Choosing how many positives to sequence
=======================================

"""

import numpy as np

from screenlab import design
from screenlab.verify import SmoothSparseFamily1D, exact_information

# A 125-sequence toy family where only sequences starting with 'A' can be active.
fam = SmoothSparseFamily1D(eta=0.03, level0=0.0)
print("hit rate", round(fam.p1, 4))

# Information per positive and per negative, exactly by enumeration
info = exact_information(fam)
print("I1", info.I1.ravel(), "I0", info.I0.ravel())

# det H_q along the grid; q = 1 wins when activity is sparse
grid = design.default_q_grid(fam.p1)
for q, d in zip(grid, design.det_curve(info.I0, info.I1, info.p_S0_given_y0, grid)):
    print(f"q={q:.3f}  det={d:.5f}")

# The same estimate by Monte Carlo, which is all you get for a real library
mc = design.information_matrices(fam.sparse_family(), fam.dist, 100_000, seed=0)
report = design.design_report(mc, hit_rate=fam.p1)
print("recommended q", report.recommended_q, "condition", report.condition_verdict)

# Rule of thumb from an observed hit rate alone
for h in (0.01, 0.1, 0.3):
    print(h, design.recommend_allocation(h))
print("nats gained at 1.5% hits:", design.info_gain_bound(0.015, 1))
