"""Confounder regression and PCA of tangent coordinates.

Shape tangents (flattened momenta) use the V-metric ``<a, b>_V = a^T M b``
with ``M = K(x0, x0) (x) I_3``; connectivity tangents (vec_sym vectors) use the
Euclidean/Frobenius metric. Both routes return components that are orthonormal
in their own metric and scores ``A`` with ``v_i ~ mean + A[i] @ components``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import qr

from .errors import LengthMismatch, RankDeficientDesign, TruncationTooLarge, ValidationError

V_METRIC = "V-metric"
FROBENIUS = "Frobenius"


@dataclass
class ConfounderTable:
    z: np.ndarray
    continuous_mask: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if self.continuous_mask is None:
            self.continuous_mask = np.ones(self.z.shape[1], dtype=bool)
        self.continuous_mask = np.asarray(self.continuous_mask, dtype=bool)
        if self.continuous_mask.shape != (self.z.shape[1],):
            raise LengthMismatch("continuous_mask needs one flag per confounder column")
        if not np.all(np.isfinite(self.z)):
            raise ValidationError("confounders must be finite")
        if self.names is None:
            self.names = [f"z{j}" for j in range(self.z.shape[1])]

    @classmethod
    def empty(cls, n: int) -> "ConfounderTable":
        return cls(np.zeros((n, 0)), np.zeros(0, dtype=bool), [])

    def design(self):
        """``[1, z - mean, (z - mean)^2 for continuous columns]`` with column names."""
        zc = self.z - self.z.mean(axis=0)
        cols = [np.ones((zc.shape[0], 1)), zc, zc[:, self.continuous_mask] ** 2]
        names = ["intercept", *self.names, *(f"{nm}^2" for nm, c in zip(self.names, self.continuous_mask) if c)]
        return np.hstack(cols), names


def regress_out(data, conf: ConfounderTable | None = None):
    """Least-squares residuals of every column of ``data`` on the confounder design."""
    data = np.asarray(data, dtype=float)
    squeeze = data.ndim == 1
    data = data.reshape(data.shape[0], -1)
    if conf is None:
        conf = ConfounderTable.empty(data.shape[0])
    x, names = conf.design()
    if x.shape[0] != data.shape[0]:
        raise LengthMismatch(f"confounders have {x.shape[0]} rows, data has {data.shape[0]}")
    if x.shape[0] <= x.shape[1]:
        raise RankDeficientDesign(names, f"{x.shape[1]} regressors need more than {x.shape[0]} subjects")
    q, r, piv = qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > diag[0] * 1e-10 * max(x.shape)))
    if rank < x.shape[1]:
        bad = [names[j] for j in piv[rank:]]
        raise RankDeficientDesign(bad)
    resid = data - q @ (q.T @ data)
    return resid[:, 0] if squeeze else resid


def _fix_signs(components, scores):
    # largest-magnitude entry of each component is made positive
    idx = np.argmax(np.abs(components), axis=1)
    s = np.sign(components[np.arange(components.shape[0]), idx])
    s[s == 0] = 1.0
    return components * s[:, None], scores * s[None, :]


@dataclass
class PCABasis:
    mean: np.ndarray
    components: np.ndarray  # (p, dim), rows psi_j
    explained_variance: np.ndarray  # (p,)
    total_variance: float
    metric: str
    metric_tensor: np.ndarray | None = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return self.components.shape[0]

    def inner(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.metric_tensor is None:
            return a @ b.T
        return a @ self.metric_tensor @ b.T

    def project(self, vectors):
        """Scores of (uncentered) tangent vectors on the basis."""
        v = np.atleast_2d(np.asarray(vectors, dtype=float)) - self.mean
        return self.inner(v, self.components)

    def to_json(self, **extra) -> dict:
        meta = {
            "metric": self.metric,
            "p": self.p,
            "explained_variance": self.explained_variance.tolist(),
            "total_variance": self.total_variance,
        }
        meta.update(extra)
        return meta


@dataclass
class ScoreBlock:
    scores: np.ndarray
    metric: str


def fit_pca(vectors, metric: str = FROBENIUS, p: int | None = None, gram=None, metric_tensor=None):
    """Principal components of tangent vectors.

    For ``metric="Frobenius"`` this is SVD PCA of the centered data. For
    ``metric="V-metric"`` it is kernel PCA on the centered Gram matrix
    ``gram[i, j] = <v_i, v_j>_V``; components are then orthonormal in the V
    inner product. ``metric_tensor`` (the matrix of that inner product) is kept
    on the basis so new vectors can be projected.

    Explained variances use the ``1/(n-1)`` convention and are sorted
    descending; component signs make the largest-magnitude entry positive.
    """
    v = np.asarray(vectors, dtype=float)
    n, dim = v.shape
    if p is None:
        p = min(n - 1, dim)
    if p < 1 or p > min(n - 1, dim):
        raise TruncationTooLarge(f"truncation {p} exceeds min(n - 1, dim) = {min(n - 1, dim)}")
    mean = v.mean(axis=0)
    vc = v - mean

    if metric == FROBENIUS:
        u, s, vt = np.linalg.svd(vc, full_matrices=False)
        lam = s**2
        comps = vt[:p]
        scores = u[:, :p] * s[:p]
        total = float(np.sum(vc * vc))
        tensor = None
    elif metric == V_METRIC:
        if gram is None:
            if metric_tensor is None:
                raise ValidationError("V-metric PCA needs the Gram matrix or the metric tensor")
            gram = v @ metric_tensor @ v.T
        g = np.asarray(gram, dtype=float)
        if g.shape != (n, n):
            raise LengthMismatch(f"Gram matrix must be {n} x {n}")
        h = np.eye(n) - 1.0 / n
        gc = h @ g @ h
        gc = 0.5 * (gc + gc.T)
        lam, vecs = np.linalg.eigh(gc)
        order = np.argsort(lam)[::-1]
        lam = np.clip(lam[order], 0.0, None)
        vecs = vecs[:, order]
        if lam[p - 1] <= 1e-12 * max(lam[0], 1e-300):
            raise TruncationTooLarge(f"only {int(np.sum(lam > 1e-12 * lam[0]))} nonzero components available")
        sq = np.sqrt(lam[:p])
        scores = vecs[:, :p] * sq
        comps = (vecs[:, :p] / sq).T @ vc
        total = float(np.trace(gc))
        tensor = metric_tensor
    else:
        raise ValidationError(f"unknown metric {metric!r}")

    comps, scores = _fix_signs(comps, scores)
    basis = PCABasis(mean, comps, lam[:p] / (n - 1), total / (n - 1), metric, tensor)
    return basis, ScoreBlock(scores, metric)


def reconstruct_tangent(basis: PCABasis, coeffs):
    """Mean-free combination ``sum_j coeffs[j] * psi_j``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != basis.p:
        raise LengthMismatch(f"expected {basis.p} coefficients, got {coeffs.shape[-1]}")
    return coeffs @ basis.components


def write_basis(basis: PCABasis, csv_path, **extra) -> None:
    """Components as CSV (first row: the mean) with a JSON sidecar."""
    csv_path = Path(csv_path)
    rows = np.vstack([basis.mean[None, :], basis.components])
    np.savetxt(csv_path, rows, delimiter=",", fmt="%.17g")
    csv_path.with_suffix(".json").write_text(
        json.dumps(basis.to_json(**extra), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
