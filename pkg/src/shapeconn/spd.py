"""Log-Euclidean geometry of symmetric positive-definite matrices.

Covariance matrices are handled as plain ``ndarray`` objects; :func:`as_spd`
symmetrizes and checks the eigenvalue floor. Tangent vectors live in the
chart ``log(C) - log(F)`` anchored at the identity, so no differentials of
the matrix exponential or logarithm are needed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateChannel,
    DimensionMismatch,
    EmptySample,
    LengthMismatch,
    NotPositiveDefinite,
    ValidationError,
)

EPS_PD = 1e-10
METRICS = ("log-euclidean", "affine-invariant", "cholesky", "square-root")


def symmetrize(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.swapaxes(-1, -2))


def as_spd(c, eps_pd=EPS_PD):
    """Return the symmetrized matrix, raising if an eigenvalue is <= ``eps_pd``."""
    c = symmetrize(c)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {c.shape}")
    w = np.linalg.eigvalsh(c)
    if not np.all(np.isfinite(w)) or w[0] <= eps_pd:
        raise NotPositiveDefinite(w[0])
    return c


def _eig_apply(c, fn):
    w, v = np.linalg.eigh(c)
    return symmetrize((v * fn(w)) @ v.T)


def matrix_log(c, eps_pd=EPS_PD):
    c = as_spd(c, eps_pd)
    return _eig_apply(c, np.log)


def matrix_exp(s):
    return _eig_apply(symmetrize(s), np.exp)


def matrix_sqrt(c, eps_pd=EPS_PD):
    c = as_spd(c, eps_pd)
    return _eig_apply(c, np.sqrt)


def logeuclid_distance(c1, c2):
    if np.shape(c1) != np.shape(c2):
        raise DimensionMismatch(f"shapes differ: {np.shape(c1)} vs {np.shape(c2)}")
    return float(np.linalg.norm(matrix_log(c1) - matrix_log(c2), "fro"))


def alt_distance(metric, c1, c2):
    """Distance between SPD matrices under one of the comparison metrics.

    ``metric`` is one of ``"affine-invariant"``, ``"cholesky"``,
    ``"square-root"`` or ``"log-euclidean"``.
    """
    if metric == "log-euclidean":
        return logeuclid_distance(c1, c2)
    c1, c2 = as_spd(c1), as_spd(c2)
    if c1.shape != c2.shape:
        raise DimensionMismatch(f"shapes differ: {c1.shape} vs {c2.shape}")
    if metric == "affine-invariant":
        w, v = np.linalg.eigh(c1)
        inv_sqrt = (v / np.sqrt(w)) @ v.T
        return float(np.linalg.norm(matrix_log(inv_sqrt @ c2 @ inv_sqrt), "fro"))
    if metric == "cholesky":
        return float(np.linalg.norm(np.linalg.cholesky(c1) - np.linalg.cholesky(c2), "fro"))
    if metric == "square-root":
        return float(np.linalg.norm(matrix_sqrt(c1) - matrix_sqrt(c2), "fro"))
    raise ValidationError(f"unknown metric {metric!r}; expected one of {METRICS}")


def frechet_mean(cs: Sequence) -> np.ndarray:
    """Log-Euclidean Fréchet mean ``exp(mean(log C_i))``.

    Logs are summed in input order, so the result is reproducible bit for bit.
    """
    if len(cs) == 0:
        raise EmptySample("cannot average an empty sample")
    shape = np.shape(cs[0])
    if any(np.shape(c) != shape for c in cs):
        raise DimensionMismatch("all matrices must share one shape")
    if len(cs) == 1:
        return as_spd(cs[0])
    acc = np.zeros(shape)
    for c in cs:
        acc += matrix_log(c)
    return matrix_exp(acc / len(cs))


def vec_sym(m) -> np.ndarray:
    """Isometric vectorization: diagonal, then ``sqrt(2)`` times the strict
    upper triangle in row-major order."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    iu = np.triu_indices(m.shape[0], 1)
    return np.concatenate([np.diag(m), np.sqrt(2.0) * m[iu]])


def sym_dim(length: int) -> int:
    k = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if k * (k + 1) // 2 != length:
        raise LengthMismatch(f"length {length} is not a triangular number")
    return k


def unvec_sym(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    k = sym_dim(v.shape[0])
    m = np.diag(v[:k])
    iu = np.triu_indices(k, 1)
    off = v[k:] / np.sqrt(2.0)
    m[iu] = off
    m[(iu[1], iu[0])] = off
    return m


@dataclass(frozen=True)
class SymTangent:
    """Tangent representative ``log(C) - log(F)`` with its vec_sym image."""

    matrix: np.ndarray
    vector: np.ndarray

    @classmethod
    def from_matrix(cls, m) -> "SymTangent":
        m = symmetrize(m)
        return cls(m, vec_sym(m))

    @classmethod
    def from_vector(cls, v) -> "SymTangent":
        v = np.asarray(v, dtype=float)
        return cls(unvec_sym(v), v.copy())


def tangent_coords(c, f) -> SymTangent:
    c, f = np.asarray(c), np.asarray(f)
    if c.shape != f.shape:
        raise DimensionMismatch(f"shapes differ: {c.shape} vs {f.shape}")
    return SymTangent.from_matrix(matrix_log(c) - matrix_log(f))


def reconstruct(v, f) -> np.ndarray:
    """Map a tangent (``SymTangent``, matrix or vec_sym vector) back to SPD."""
    if isinstance(v, SymTangent):
        m = v.matrix
    else:
        m = np.asarray(v, dtype=float)
        if m.ndim == 1:
            m = unvec_sym(m)
    f = np.asarray(f, dtype=float)
    if m.shape != f.shape:
        raise DimensionMismatch(f"tangent shape {m.shape} does not match base {f.shape}")
    return matrix_exp(matrix_log(f) + m)


@dataclass
class CovarianceResult:
    matrix: np.ndarray
    floored: bool


def covariance_from_runs(runs: Sequence, eps_pd=EPS_PD, labels=None) -> CovarianceResult:
    """Average of per-run correlation-scale covariances.

    Each run (``T x K``, time by region) is demeaned and scaled to unit sample
    variance; the run covariances (``1/(T-1)``) are averaged. Eigenvalues at or
    below ``eps_pd`` are raised to ``eps_pd`` and the result is flagged.
    """
    if len(runs) == 0:
        raise EmptySample("no runs supplied")
    k = None
    acc = None
    for r, run in enumerate(runs):
        x = np.asarray(run, dtype=float)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValidationError(f"run {r} must be a T x K array with T >= 2, got {x.shape}")
        if k is None:
            k = x.shape[1]
            acc = np.zeros((k, k))
        elif x.shape[1] != k:
            raise DimensionMismatch(f"run {r} has {x.shape[1]} regions, expected {k}")
        if not np.all(np.isfinite(x)):
            raise ValidationError(f"run {r} has non-finite entries")
        x = x - x.mean(axis=0)
        sd = x.std(axis=0, ddof=1)
        bad = np.flatnonzero(sd <= 0.0)
        if bad.size:
            region = labels[bad[0]] if labels is not None else int(bad[0])
            raise DegenerateChannel(region)
        x = x / sd
        acc += (x.T @ x) / (x.shape[0] - 1)
    c = symmetrize(acc / len(runs))
    w, v = np.linalg.eigh(c)
    floored = bool(w[0] <= eps_pd)
    if floored:
        w = np.maximum(w, 2 * eps_pd)
        c = symmetrize((v * w) @ v.T)
    return CovarianceResult(c, floored)


def parcel_average(x, labels):
    """Average raw channels (columns of ``x``) sharing a parcel label.

    Returns the ``T x R`` region time series and the sorted unique labels.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    if labels.shape[0] != x.shape[1]:
        raise LengthMismatch("one label per channel is required")
    uniq = np.unique(labels)
    out = np.stack([x[:, labels == u].mean(axis=1) for u in uniq], axis=1)
    return out, uniq


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_matrix_csv(m, path) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in m:
            w.writerow([repr(float(v)) for v in row])


def read_timeseries_manifest(path):
    """Load a subject's runs from a manifest JSON.

    The manifest holds ``{"runs": [relative csv paths], "labels": [...]}``;
    run files are ``T x K`` CSVs resolved relative to the manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"time-series manifest not found: {path}")
    meta = json.loads(path.read_text(encoding="utf-8"))
    runs = [read_matrix_csv(path.parent / r) for r in meta["runs"]]
    return runs, meta.get("labels")
