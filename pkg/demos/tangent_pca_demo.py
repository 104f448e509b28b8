"""
Confound removal and principal components in tangent spaces
===========================================================

Regresses age and sex out of connectivity tangent vectors, then keeps the
leading principal components. Scores are uncorrelated and their variances
are the explained variances.
"""

import numpy as np

from shapeconn import spd
from shapeconn.tangent_stats import FROBENIUS, ConfounderTable, fit_pca, regress_out

rng = np.random.default_rng(2)
n = 40
age = rng.uniform(22, 36, n)
sex = rng.integers(0, 2, n).astype(float)
base = spd.matrix_log(np.eye(4) + 0.3)

covs = []
for i in range(n):
    s = rng.standard_normal((4, 4))
    s = 0.2 * (s + s.T) + 0.02 * (age[i] - 29) * np.eye(4)
    covs.append(spd.matrix_exp(base + s))
mean = spd.frechet_mean(covs)
vecs = np.array([spd.tangent_coords(c, mean).vector for c in covs])

conf = ConfounderTable(np.column_stack([age, sex]), [True, False], ["age", "sex"])
resid = regress_out(vecs, conf)
print("correlation of the first coordinate with age before/after:",
      round(np.corrcoef(vecs[:, 0], age)[0, 1], 3), round(np.corrcoef(resid[:, 0], age)[0, 1], 3))

basis, scores = fit_pca(resid, FROBENIUS, 3)
print("explained variance:", basis.explained_variance.round(4))
print("fraction of total:", round(basis.explained_variance.sum() / basis.total_variance, 3))
print("score covariance:\n", np.cov(scores.scores, rowvar=False).round(4))
