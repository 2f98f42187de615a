"""
Consistency and posterior shape on the toy family
=================================================

"""

import numpy as np

from screenlab.design import asymptotic_precision
from screenlab.verify import SmoothSparseFamily1D, exact_information, mle_path, posterior_grid

fam = SmoothSparseFamily1D()

# Positives only: the pooled fit converges, plain cross-entropy does not
for objective in ("leavs", "xy-only"):
    for row in mle_path(fam, 1.0, [50, 500, 5000], objective, seeds=[0]):
        print(objective, row["n"], "TV", round(row["tv"], 4))

# Grid posterior against its Gaussian approximation
info = exact_information(fam)
H1 = asymptotic_precision(1.0, info.I0, info.I1, info.p_S0_given_y0)
n = 5000
n1, n0 = fam.sample_counts(n, 1.0, np.random.default_rng(0))
sd = 1 / np.sqrt(n * H1[0, 0])
pg = posterior_grid(fam, n1, n0, [[1 - 12 * sd, 1 + 12 * sd]], 1201, n * H1)
print("MAP", pg.map_theta, "TV to Gaussian", round(pg.tv, 4))
