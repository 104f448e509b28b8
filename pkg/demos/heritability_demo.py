"""
Genetic and environmental covariances of a twin cohort
======================================================

Simulates three traits for MZ and DZ twins from the variance-component
model, fits both covariances by restricted maximum likelihood and reports
heritability and the leading genetic mode linking a shape trait to two
connectivity traits.
"""

import numpy as np

from shapeconn.cca import cca_modes
from shapeconn.pedigree import kinship, synthetic_cohort
from shapeconn.variance_components import (
    TraitPartition,
    VCModel,
    format_heritability,
    heritability,
    reml_fit,
    sample_scores,
)

ped = synthetic_cohort(150, {"mz": 0.5, "dz": 0.5}, seed=3)
k = kinship(ped).subset(ped.non_founders).k
sigma_g = np.array([[1.0, 0.5, 0.2], [0.5, 0.8, 0.1], [0.2, 0.1, 0.5]])
sigma_e = np.array([[0.4, 0.0, 0.1], [0.0, 0.5, 0.0], [0.1, 0.0, 0.6]])
a = sample_scores(VCModel(k), sigma_g, sigma_e, seed=4)

fit = reml_fit(a, VCModel(k))
np.set_printoptions(precision=3, suppress=True)
print("converged:", fit.converged)
print("Sigma_G estimate\n", fit.sigma_g)
print("standard errors\n", fit.se_g)
print("Sigma_E estimate\n", fit.sigma_e)

part = TraitPartition(["shape", "connectivity", "connectivity"])
print(format_heritability(heritability(fit, part)))
print("true overall h2:", round(np.trace(sigma_g) / np.trace(sigma_g + sigma_e), 3))

(mode,) = cca_modes(fit.sigma_g, part, n_modes=1)
print(f"genetic mode: correlation {mode.correlation:.3f}, theta_s {mode.theta_s}, theta_c {mode.theta_c}")
