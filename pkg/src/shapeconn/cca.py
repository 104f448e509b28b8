"""Canonical modes of shape-connectivity co-variation from a fitted covariance.

Given a trait covariance (``Sigma_G`` or ``Sigma_E``) partitioned into shape
and connectivity blocks, the leading mode maximizes ``theta^T S_sc eta``
subject to ``theta^T S_ss theta = eta^T S_cc eta = 1``. Modes are read off the
SVD of the whitened cross block, which also makes later modes orthogonal to
earlier ones in both block metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lddmm, spd
from .errors import BlockNotPD, LengthMismatch, TooManyModes, ValidationError
from .tangent_stats import PCABasis, reconstruct_tangent
from .variance_components import TraitPartition


@dataclass
class CCAMode:
    theta_s: np.ndarray
    theta_c: np.ndarray
    correlation: float
    component_index: int
    source: str = "genetic"

    def to_json(self, **extra) -> dict:
        out = {
            "theta_s": self.theta_s.tolist(),
            "theta_c": self.theta_c.tolist(),
            "correlation": self.correlation,
            "component_index": self.component_index,
            "source": self.source,
        }
        out.update(extra)
        return out


def _inv_sqrt(block, label):
    w, v = np.linalg.eigh(0.5 * (block + block.T))
    if w[0] <= 0:
        raise BlockNotPD(f"{label} block is not positive definite (min eigenvalue {w[0]:.3e}); increase the ridge")
    return (v / np.sqrt(w)) @ v.T


def default_ridge(block) -> float:
    return 1e-8 * float(np.trace(block)) / block.shape[0]


def cca_modes(
    sigma,
    part: TraitPartition,
    n_modes: int | None = None,
    ridge: float | None = None,
    source: str = "genetic",
    shape_label: str = "shape",
    conn_label: str = "connectivity",
) -> list[CCAMode]:
    """Canonical modes between the ``shape`` and ``connectivity`` blocks.

    ``ridge`` is added to both diagonal blocks before whitening (default
    ``1e-8 * trace(block) / dim`` per block). Returned vectors are rescaled to
    unit norm in the unridged block metric whenever that block is positive
    definite. Signs make the largest-magnitude entry of ``theta_s`` positive.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (len(part), len(part)):
        raise LengthMismatch(f"covariance is {sigma.shape}, partition has {len(part)} labels")
    i_s, i_c = part.indices(shape_label), part.indices(conn_label)
    if i_s.size == 0 or i_c.size == 0:
        raise ValidationError("both a shape and a connectivity block are required")
    s_ss = sigma[np.ix_(i_s, i_s)]
    s_cc = sigma[np.ix_(i_c, i_c)]
    s_sc = sigma[np.ix_(i_s, i_c)]
    max_modes = min(i_s.size, i_c.size)
    n_modes = max_modes if n_modes is None else int(n_modes)
    if n_modes < 1 or n_modes > max_modes:
        raise TooManyModes(f"requested {n_modes} modes; at most {max_modes} available")

    r_s = default_ridge(s_ss) if ridge is None else float(ridge)
    r_c = default_ridge(s_cc) if ridge is None else float(ridge)
    if r_s < 0 or r_c < 0:
        raise ValidationError("ridge must be nonnegative")
    w_s = _inv_sqrt(s_ss + r_s * np.eye(i_s.size), shape_label)
    w_c = _inv_sqrt(s_cc + r_c * np.eye(i_c.size), conn_label)
    u, d, vt = np.linalg.svd(w_s @ s_sc @ w_c)

    modes = []
    for j in range(n_modes):
        theta = w_s @ u[:, j]
        eta = w_c @ vt[j]
        for vec, blk in ((theta, s_ss), (eta, s_cc)):
            q = float(vec @ blk @ vec)
            if q > 0 and np.linalg.eigvalsh(blk)[0] > 0:
                vec /= np.sqrt(q)
        sign = np.sign(theta[np.argmax(np.abs(theta))]) or 1.0
        modes.append(CCAMode(sign * theta, sign * eta, float(np.clip(d[j], 0.0, 1.0)), j, source))
    return modes


def mode_sigma(raw_scores, theta) -> float:
    """Standard deviation of raw descriptors projected on ``theta / |theta|``."""
    theta = np.asarray(theta, dtype=float)
    u = theta / np.linalg.norm(theta)
    return float(np.std(np.asarray(raw_scores, dtype=float) @ u, ddof=1))


@dataclass
class ModeDisplay:
    """Endpoints of a mode at ``-c * sigma`` and ``+c * sigma``.

    ``*_tangent`` hold the ``+`` tangents; the ``-`` display uses their exact
    negation.
    """

    c: float
    sigma_s: float
    sigma_c: float
    shape_tangent: np.ndarray  # flattened momenta
    conn_tangent: np.ndarray  # vec_sym vector
    shape_minus: np.ndarray
    shape_plus: np.ndarray
    conn_minus: np.ndarray
    conn_plus: np.ndarray


def _unit(v):
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    return v / nrm if nrm > 0 else v


def mode_displays(
    mode: CCAMode,
    shape_basis: PCABasis,
    conn_basis: PCABasis,
    template,
    frechet,
    kernel: lddmm.KernelSpec,
    sigma_s: float,
    sigma_c: float,
    c: float = 3.0,
    steps: int = lddmm.DEFAULT_STEPS,
) -> ModeDisplay:
    """Shape and connectivity displays of a mode at ``+-c`` standard deviations.

    ``theta_s``/``theta_c`` are taken as directions in raw score space; the
    tangents are ``c * sigma * sum_j u_j psi_j`` with ``u`` the unit direction.
    The shape display shoots the template with those momenta, the
    connectivity display maps the tangent back at the Fréchet mean.
    """
    template = np.asarray(template, dtype=float)
    shape_t = c * sigma_s * reconstruct_tangent(shape_basis, _unit(mode.theta_s))
    conn_t = c * sigma_c * reconstruct_tangent(conn_basis, _unit(mode.theta_c))
    shapes = []
    for t in (-shape_t, shape_t):
        mom = t.reshape(template.shape)
        shapes.append(lddmm.shoot(kernel, template, mom, steps).endpoint if np.any(mom) else template.copy())
    conns = [spd.reconstruct(t, frechet) if np.any(t) else np.array(frechet, dtype=float) for t in (-conn_t, conn_t)]
    return ModeDisplay(c, sigma_s, sigma_c, shape_t, conn_t, shapes[0], shapes[1], conns[0], conns[1])


@dataclass
class SizeDisplay:
    beta: np.ndarray
    sigma_size: float
    c: float
    conn_tangent: np.ndarray
    conn_minus: np.ndarray
    conn_plus: np.ndarray


def size_regression_display(
    sigma,
    part: TraitPartition,
    conn_basis: PCABasis,
    frechet,
    sigma_size: float,
    c: float = 3.0,
    size_label: str = "size",
    conn_label: str = "connectivity",
) -> SizeDisplay:
    """Connectivity change predicted by a ``+-c * sigma_size`` change in size.

    Regression coefficients ``beta = Sigma[C, size] / Sigma[size, size]`` come
    from the fitted (raw-unit) covariance of one source.
    """
    sigma = np.asarray(sigma, dtype=float)
    i_l, i_c = part.indices(size_label), part.indices(conn_label)
    if i_l.size != 1:
        raise ValidationError("exactly one size column is required")
    var_l = float(sigma[i_l[0], i_l[0]])
    if var_l <= 0:
        raise ValidationError("size variance must be positive")
    beta = sigma[i_c, i_l[0]] / var_l
    tangent = c * sigma_size * reconstruct_tangent(conn_basis, beta)
    fr = np.array(frechet, dtype=float)
    minus = spd.reconstruct(-tangent, fr) if np.any(tangent) else fr.copy()
    plus = spd.reconstruct(tangent, fr) if np.any(tangent) else fr.copy()
    return SizeDisplay(beta, float(sigma_size), c, tangent, minus, plus)


def write_modes(modes, path, sigmas=None) -> None:
    """Mode export: theta vectors, correlations, source and optional sigmas."""
    items = []
    for j, m in enumerate(modes):
        extra = {}
        if sigmas is not None:
            extra = {"sigma_s": sigmas[j][0], "sigma_c": sigmas[j][1]}
        items.append(m.to_json(**extra))
    Path(path).write_text(json.dumps({"modes": items}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
