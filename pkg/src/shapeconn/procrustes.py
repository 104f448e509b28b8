"""Generalized Procrustes analysis of 3D landmark configurations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateConfiguration, DimensionMismatch


@dataclass
class ProcrustesResult:
    """Aligned shapes and the template.

    Subject ``i`` maps to its aligned copy by
    ``aligned[i] = (shape_i - translations[i]) @ rotations[i] / scale_i``,
    where ``scale_i = exp(log_sizes[i])`` when scale is removed and 1 otherwise.
    """

    aligned: np.ndarray  # (n, L, 3)
    template: np.ndarray  # (L, 3)
    log_sizes: np.ndarray  # (n,)
    rotations: np.ndarray  # (n, 3, 3), proper
    translations: np.ndarray  # (n, 3)
    iterations: int
    converged: bool


def centroid_size(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x - x.mean(axis=0)))


def optimal_rotation(x, y) -> np.ndarray:
    """Proper rotation ``R`` minimizing ``|x @ R - y|_F`` for centered ``x``, ``y``."""
    u, _, vt = np.linalg.svd(x.T @ y)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _canonical_frame(t):
    """Rotation putting ``t`` on its principal axes with a fixed sign rule."""
    w, v = np.linalg.eigh(t.T @ t)
    v = v[:, ::-1]
    proj = t @ v
    for j in range(2):
        if proj[np.argmax(np.abs(proj[:, j])), j] < 0:
            v[:, j] = -v[:, j]
    if np.linalg.det(v) < 0:
        v[:, 2] = -v[:, 2]
    return v


def gpa(shapes: Sequence, remove_scale: bool = True, tol: float = 1e-10, max_iter: int = 100) -> ProcrustesResult:
    """Iteratively align ``shapes`` to their evolving mean.

    Translation and rotation are always removed; scale is removed when
    ``remove_scale`` (the log centroid sizes are reported either way). The
    converged mean is put in a canonical principal-axes orientation, which
    makes the template independent of any common rigid motion of the inputs.
    """
    arrays = [np.asarray(s, dtype=float) for s in shapes]
    if len({a.shape for a in arrays}) > 1:
        raise DimensionMismatch("all shapes must have the same number of landmarks")
    xs = np.asarray(arrays)
    if xs.ndim != 3 or xs.shape[2] != 3:
        raise DimensionMismatch("shapes must be a list of L x 3 arrays with a common L")
    n, L, _ = xs.shape
    if n < 2 or L < 3:
        raise DimensionMismatch(f"need at least 2 shapes with 3 landmarks, got {n} with {L}")

    translations = xs.mean(axis=1)
    centered = xs - translations[:, None, :]
    sizes = np.linalg.norm(centered, axis=(1, 2))
    for i, c in enumerate(centered):
        sv = np.linalg.svd(c, compute_uv=False)
        if sv[1] <= 1e-12 * max(sv[0], 1e-300):
            raise DegenerateConfiguration(f"shape {i} is collinear or collapsed")
    log_sizes = np.log(sizes)
    work = centered / sizes[:, None, None] if remove_scale else centered.copy()

    mean = work[0] / np.linalg.norm(work[0])
    rotations = np.tile(np.eye(3), (n, 1, 1))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        for i in range(n):
            rotations[i] = optimal_rotation(work[i], mean)
        aligned = np.einsum("nlk,nkj->nlj", work, rotations)
        new_mean = aligned.mean(axis=0)
        new_mean /= np.linalg.norm(new_mean)
        # the mean can rotate freely between iterations; measure change modulo rotation
        r = optimal_rotation(new_mean, mean)
        change = np.linalg.norm(new_mean @ r - mean)
        mean = new_mean @ r
        if change < tol:
            converged = True
            break

    for i in range(n):
        rotations[i] = optimal_rotation(work[i], mean)
    frame = _canonical_frame(mean)
    rotations = rotations @ frame
    aligned = np.einsum("nlk,nkj->nlj", work, rotations)
    template = aligned.mean(axis=0)
    if remove_scale:
        template /= np.linalg.norm(template)
    return ProcrustesResult(aligned, template, log_sizes, rotations, translations, it, converged)
