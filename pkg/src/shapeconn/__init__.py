"""Joint statistics of landmark shapes and functional connectivity.

Shapes are represented by LDDMM initial momenta at a Procrustes template,
connectivity by log-Euclidean tangent coordinates of SPD covariance matrices.
Truncated principal scores of both, together with log size, enter a
kinship-structured matrix-normal variance-component model whose genetic and
environmental covariances are summarized by heritability and canonical modes.
"""

__version__ = "0.1.0"

from .errors import ShapeConnError, StageError, ValidationError, NumericalError
from .pedigree import Individual, KinshipMatrix, Pedigree, kinship, parse_pedigree, synthetic_cohort
from .spd import (
    frechet_mean,
    logeuclid_distance,
    matrix_exp,
    matrix_log,
    reconstruct,
    tangent_coords,
    unvec_sym,
    vec_sym,
)
from .lddmm import KernelSpec, kernel_apply, match, shoot, vnorm_sq
from .procrustes import gpa
from .tangent_stats import ConfounderTable, fit_pca, reconstruct_tangent, regress_out
from .variance_components import TraitPartition, VCModel, heritability, reml_fit, sample_scores
from .cca import cca_modes, mode_displays, size_regression_display
from .simulation import SimConfig, naive_baseline, random_correlation, run_study

__all__ = [
    "ShapeConnError", "StageError", "ValidationError", "NumericalError",
    "Individual", "KinshipMatrix", "Pedigree", "kinship", "parse_pedigree", "synthetic_cohort",
    "frechet_mean", "logeuclid_distance", "matrix_exp", "matrix_log", "reconstruct", "tangent_coords",
    "unvec_sym", "vec_sym",
    "KernelSpec", "kernel_apply", "match", "shoot", "vnorm_sq", "gpa",
    "ConfounderTable", "fit_pca", "reconstruct_tangent", "regress_out",
    "TraitPartition", "VCModel", "heritability", "reml_fit", "sample_scores",
    "cca_modes", "mode_displays", "size_regression_display",
    "SimConfig", "naive_baseline", "random_correlation", "run_study",
]
