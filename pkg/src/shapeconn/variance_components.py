"""Matrix-normal variance components: ``A = X B + G + E``.

``G ~ MN(0, K, Sigma_G)`` and ``E ~ MN(0, I, Sigma_E)`` with a known
relatedness matrix ``K``. Rotating the rows by the eigenvectors of
``K = Q diag(lam) Q^T`` makes them independent, row ``i`` having covariance
``lam_i Sigma_G + Sigma_E``; the restricted likelihood is then a sum of small
``p x p`` terms and is minimized over Cholesky factors of both covariances.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import (
    DesignRankDeficient,
    IdentifiabilityWarning,
    KNotPSD,
    LengthMismatch,
    SingularRowCovariance,
    ValidationError,
)

LOG2PI = np.log(2.0 * np.pi)
MAX_COND = 1e12
SIGMA_E_FLOOR = 1e-8
LOG_DIAG_BOUNDS = (-20.0, 20.0)


def rng_for(*key) -> np.random.Generator:
    """Counter-based generator keyed by integers, e.g. ``(seed, replicate)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass
class VCModel:
    k: np.ndarray
    x: np.ndarray | None = None

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=float)
        if self.k.ndim != 2 or self.k.shape[0] != self.k.shape[1]:
            raise ValidationError(f"K must be square, got shape {self.k.shape}")
        if not np.allclose(self.k, self.k.T, atol=1e-10):
            raise KNotPSD("K is not symmetric")
        self.k = 0.5 * (self.k + self.k.T)
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float)
            if self.x.ndim == 1:
                self.x = self.x[:, None]
            if self.x.shape[0] != self.k.shape[0]:
                raise LengthMismatch(f"X has {self.x.shape[0]} rows, K has {self.k.shape[0]}")
            if np.linalg.matrix_rank(self.x) < self.x.shape[1]:
                raise DesignRankDeficient("fixed-effect design is not of full column rank")

    @property
    def n(self) -> int:
        return self.k.shape[0]

    @property
    def s(self) -> int:
        return 0 if self.x is None else self.x.shape[1]


@dataclass
class TraitPartition:
    labels: list[str]

    @classmethod
    def from_sizes(cls, n_size: int = 1, n_shape: int = 0, n_conn: int = 0) -> "TraitPartition":
        return cls(["size"] * n_size + ["shape"] * n_shape + ["connectivity"] * n_conn)

    def indices(self, label: str) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.labels) == label)

    @property
    def blocks(self) -> list[str]:
        seen = []
        for lab in self.labels:
            if lab not in seen:
                seen.append(lab)
        return seen

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class RotatedData:
    """Eigen-rotated problem: independent rows with covariance ``lam_i G + E``."""

    lam: np.ndarray
    a: np.ndarray
    x: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def p(self) -> int:
        return self.a.shape[1]

    @property
    def s(self) -> int:
        return 0 if self.x is None else self.x.shape[1]


def eigen_kinship(k, tol=1e-8):
    """Eigendecomposition of ``K`` with negative round-off clipped to zero."""
    lam, q = np.linalg.eigh(np.asarray(k, dtype=float))
    scale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    if lam.size and lam[0] < -tol * scale:
        raise KNotPSD(f"K has a negative eigenvalue {lam[0]:.3e}")
    return np.clip(lam, 0.0, None), q


def rotate(a, model: VCModel, eig=None) -> RotatedData:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != model.n:
        raise LengthMismatch(f"scores have {a.shape[0]} rows, K has {model.n}")
    lam, q = eig if eig is not None else eigen_kinship(model.k)
    xr = None if model.x is None else q.T @ model.x
    return RotatedData(lam, q.T @ a, xr)


def _row_covariances(lam, sigma_g, sigma_e):
    return lam[:, None, None] * sigma_g[None] + sigma_e[None]


def _criterion(data: RotatedData, sigma_g, sigma_e, b=None, want_grad=False):
    """-2 log restricted likelihood (ML when there are no fixed effects).

    Returns the value and, if requested, gradients with respect to the
    symmetric matrices ``sigma_g`` and ``sigma_e``.
    """
    v = _row_covariances(data.lam, sigma_g, sigma_e)
    try:
        chol = np.linalg.cholesky(v)
    except np.linalg.LinAlgError:
        raise SingularRowCovariance("a rotated row covariance is not positive definite") from None
    d = np.diagonal(chol, axis1=1, axis2=2)
    if np.min(d) <= 0:
        raise SingularRowCovariance("rotated row covariance is numerically singular")
    eye = np.broadcast_to(np.eye(data.p), v.shape)
    linv = np.linalg.solve(chol, eye)
    vinv = np.einsum("nki,nkj->nij", linv, linv)
    logdet = 2.0 * np.sum(np.log(d))

    n, p, s = data.n, data.p, data.s
    reml_term = 0.0
    minv = None
    if s:
        x = data.x
        if b is None:
            m = np.einsum("is,it,ijk->sjtk", x, x, vinv).reshape(s * p, s * p)
            rhs = np.einsum("is,ij->sj", x, np.einsum("ijk,ik->ij", vinv, data.a)).reshape(-1)
            mc = np.linalg.cholesky(m)
            beta = np.linalg.solve(mc.T, np.linalg.solve(mc, rhs))
            b = beta.reshape(s, p)
            reml_term = 2.0 * np.sum(np.log(np.diag(mc)))
            if want_grad:
                minv = np.linalg.inv(m).reshape(s, p, s, p)
        resid = data.a - x @ b
    else:
        resid = data.a

    u = np.einsum("ijk,ik->ij", vinv, resid)
    quad = float(np.sum(u * resid))
    n_eff = n - s if reml_term else n
    value = logdet + quad + reml_term + n_eff * p * LOG2PI
    if not want_grad:
        return value, b
    w = vinv - u[:, :, None] * u[:, None, :]
    if minv is not None:
        pmat = np.einsum("is,it,sjtk->ijk", data.x, data.x, minv)
        w = w - np.einsum("nij,njk,nkl->nil", vinv, pmat, vinv)
    grad_g = np.einsum("n,nij->ij", data.lam, w)
    grad_e = w.sum(axis=0)
    return value, b, 0.5 * (grad_g + grad_g.T), 0.5 * (grad_e + grad_e.T)


def reml_objective(chol_g, chol_e, data: RotatedData, b=None) -> float:
    """Criterion ``-2 l_R`` at ``Sigma_G = L_G L_G^T``, ``Sigma_E = L_E L_E^T``.

    With fixed effects and ``b=None`` the effects are profiled out by GLS and
    the REML correction ``log|sum X_i-weighted information|`` is added;
    with an explicit ``b`` the plain likelihood at that ``B`` is returned.
    """
    lg = np.atleast_2d(np.asarray(chol_g, dtype=float))
    le = np.atleast_2d(np.asarray(chol_e, dtype=float))
    sg, se = lg @ lg.T, le @ le.T
    v = _row_covariances(data.lam, sg, se)
    w = np.linalg.eigvalsh(v)
    if np.min(w) <= 0 or np.max(w[:, -1] / w[:, 0]) > MAX_COND:
        raise SingularRowCovariance("lam_i Sigma_G + Sigma_E is ill-conditioned beyond 1e12")
    return float(_criterion(data, sg, se, b)[0])


class _Param:
    """Packing of two lower-triangular factors into an unconstrained vector.

    Diagonals are log-parameterized; the environmental diagonal is offset by
    ``sqrt(floor)`` so ``Sigma_E`` stays strictly positive definite.
    """

    def __init__(self, p, e_floor):
        self.p = p
        self.tril = np.tril_indices(p)
        self.diag_pos = np.flatnonzero(self.tril[0] == self.tril[1])
        self.m = len(self.tril[0])
        self.e_offset = np.sqrt(np.asarray(e_floor, dtype=float) * np.ones(p))

    def unpack(self, theta):
        lg = np.zeros((self.p, self.p))
        le = np.zeros((self.p, self.p))
        tg, te = theta[: self.m].copy(), theta[self.m :].copy()
        tg[self.diag_pos] = np.exp(tg[self.diag_pos])
        te[self.diag_pos] = np.exp(te[self.diag_pos])
        lg[self.tril] = tg
        le[self.tril] = te
        le[np.diag_indices(self.p)] += self.e_offset
        return lg, le

    def pack(self, lg, le):
        tg = lg[self.tril].copy()
        te = le[self.tril].copy()
        tg[self.diag_pos] = np.log(np.maximum(np.abs(tg[self.diag_pos]), np.exp(LOG_DIAG_BOUNDS[0])))
        d = np.abs(te[self.diag_pos]) - self.e_offset
        te[self.diag_pos] = np.log(np.maximum(d, np.exp(LOG_DIAG_BOUNDS[0])))
        theta = np.concatenate([tg, te])
        lo, hi = self.bounds_arrays()
        return np.clip(theta, lo, hi)

    def bounds_arrays(self):
        lo = np.full(2 * self.m, -np.inf)
        hi = np.full(2 * self.m, np.inf)
        for off in (0, self.m):
            lo[off + self.diag_pos] = LOG_DIAG_BOUNDS[0]
            hi[off + self.diag_pos] = LOG_DIAG_BOUNDS[1]
        return lo, hi

    def bounds(self):
        lo, hi = self.bounds_arrays()
        return [(None if np.isinf(a) else a, None if np.isinf(b) else b) for a, b in zip(lo, hi)]

    def chain(self, lg, le, dg, de, theta):
        """Gradient in theta from gradients in ``Sigma_G``, ``Sigma_E``."""
        jg = (2.0 * dg @ lg)[self.tril]
        je = (2.0 * de @ le)[self.tril]
        ex = np.exp(theta)
        jg[self.diag_pos] *= ex[: self.m][self.diag_pos]
        je[self.diag_pos] *= ex[self.m :][self.diag_pos]
        return np.concatenate([jg, je])


def _value_grad(theta, data, par):
    lg, le = par.unpack(theta)
    try:
        value, _, dg, de = _criterion(data, lg @ lg.T, le @ le.T, want_grad=True)
    except (SingularRowCovariance, np.linalg.LinAlgError):
        return np.inf, np.zeros_like(theta)
    return value, par.chain(lg, le, dg, de, theta)


def _hessian(theta, data, par, h=1e-5):
    m = theta.size
    hess = np.zeros((m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        hess[:, j] = (_value_grad(theta + e, data, par)[1] - _value_grad(theta - e, data, par)[1]) / (2 * h)
    return 0.5 * (hess + hess.T)


@dataclass
class VCFit:
    sigma_g: np.ndarray
    sigma_e: np.ndarray
    chol_g: np.ndarray
    chol_e: np.ndarray
    b: np.ndarray | None
    reml: float
    converged: bool
    iterations: int
    se_g: np.ndarray | None = None
    se_e: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.sigma_g.shape[0]

    def to_json(self, partition: TraitPartition | None = None) -> dict:
        out = {
            "sigma_g": self.sigma_g.tolist(),
            "sigma_e": self.sigma_e.tolist(),
            "reml": self.reml,
            "converged": self.converged,
            "iterations": self.iterations,
            "diagnostics": _jsonable(self.diagnostics),
        }
        if self.b is not None:
            out["b"] = self.b.tolist()
        if self.se_g is not None:
            out["se_g"] = _jsonable(self.se_g)
            out["se_e"] = _jsonable(self.se_e)
        if partition is not None:
            out["partition"] = list(partition.labels)
            out["heritability"] = heritability(self, partition)
        return out


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()] if obj.ndim else _jsonable(obj.item())
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _jsonable(obj.item())
    return obj


def _psd_factor(sigma):
    w, v = np.linalg.eigh(0.5 * (sigma + sigma.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def _start_factors(s_cov, frac_g, p):
    sg = frac_g * s_cov
    se = (1.0 - frac_g) * s_cov
    jitter = 1e-6 * np.eye(p)
    return np.linalg.cholesky(sg + jitter), np.linalg.cholesky(se + jitter)


def _newton_polish(theta, data, par, gtol, max_steps=50):
    lo, hi = par.bounds_arrays()
    f, g = _value_grad(theta, data, par)
    for _ in range(max_steps):
        if np.max(np.abs(g)) <= gtol * max(1.0, abs(f)):
            break
        hess = _hessian(theta, data, par)
        w, v = np.linalg.eigh(hess)
        w = np.maximum(np.abs(w), 1e-8 * max(1.0, np.max(np.abs(w))))
        step = -(v / w) @ (v.T @ g)
        t = 1.0
        improved = False
        while t > 1e-10:
            cand = np.clip(theta + t * step, lo, hi)
            fc, gc = _value_grad(cand, data, par)
            if fc <= f - 1e-4 * t * abs(g @ step) or (fc < f and t < 1e-3):
                theta, f, g = cand, fc, gc
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return theta, f, g


def reml_fit(
    a,
    model: VCModel,
    *,
    gtol: float = 1e-6,
    maxiter: int = 500,
    polish: bool = True,
    standard_errors: bool = True,
    eig=None,
) -> VCFit:
    """Fit ``Sigma_G`` and ``Sigma_E`` by (restricted) maximum likelihood.

    Traits are rescaled to unit standard deviation internally. Three
    deterministic starts split the sample covariance ``S`` as
    ``(S/2, S/2)``, ``(0.9 S, 0.1 S)`` and ``(0.1 S, 0.9 S)``; each is run by
    L-BFGS-B on the log-Cholesky parameters and the best is refined with a
    safeguarded Newton iteration on a finite-difference Hessian of the
    analytic gradient. ``converged`` is False when the final gradient fails
    ``max|g| <= gtol * max(1, |f|)``; the best estimate is still returned.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    n, p = a.shape
    s = model.s
    if n <= p + s:
        raise ValidationError(f"need n > p + s, got n={n}, p={p}, s={s}")
    lam, q = eig if eig is not None else eigen_kinship(model.k)
    spread = float(np.max(lam) - np.min(lam)) if lam.size else 0.0
    identifiable = spread > 1e-8 * max(1.0, float(np.max(np.abs(lam))))
    if not identifiable:
        warnings.warn(
            "K has a single distinct eigenvalue: only Sigma_G + Sigma_E is identified",
            IdentifiabilityWarning,
            stacklevel=2,
        )

    n_null = int(np.sum(lam <= 1e-8 * max(1.0, float(np.max(np.abs(lam))))))
    if identifiable and 0 < n_null < p:
        # rows with lam = 0 see Sigma_E alone; fewer than p of them let Sigma_E
        # collapse onto their span while Sigma_G covers the rest
        warnings.warn(
            f"K has {n_null} null directions but p = {p}: the likelihood is unbounded as Sigma_E "
            "becomes singular and the fit will stop at the Sigma_E floor",
            IdentifiabilityWarning,
            stacklevel=2,
        )

    scale = a.std(axis=0, ddof=1)
    scale[~(scale > 0)] = 1.0
    a_std = a / scale
    data = rotate(a_std, model, (lam, q))

    if s:
        resid = a_std - model.x @ np.linalg.lstsq(model.x, a_std, rcond=None)[0]
        s_cov = resid.T @ resid / (n - s)
    else:
        s_cov = a_std.T @ a_std / n
    par = _Param(p, SIGMA_E_FLOOR)

    starts = []
    for frac in (0.5, 0.9, 0.1):
        lg0, le0 = _start_factors(s_cov, frac, p)
        theta0 = par.pack(lg0, le0)
        history = []

        def cb(xk, history=history):
            history.append(_value_grad(xk, data, par)[0])

        res = minimize(
            _value_grad,
            theta0,
            args=(data, par),
            jac=True,
            method="L-BFGS-B",
            bounds=par.bounds(),
            callback=cb,
            options={"maxiter": maxiter, "gtol": 1e-10, "ftol": 1e-15, "maxcor": 30},
        )
        starts.append((float(res.fun), res.x, int(res.nit), history))

    best = min(range(len(starts)), key=lambda i: starts[i][0])
    f_best, theta, iters, history = starts[best]
    if polish:
        theta, f_best, g = _newton_polish(theta, data, par, gtol)
    else:
        f_best, g = _value_grad(theta, data, par)
    grad_max = float(np.max(np.abs(g)))
    converged = bool(np.isfinite(f_best) and grad_max <= gtol * max(1.0, abs(f_best)))

    lg, le = par.unpack(theta)
    d = np.diag(scale)
    sigma_g = d @ lg @ lg.T @ d
    sigma_e = d @ le @ le.T @ d
    chol_g, chol_e = d @ lg, d @ le
    reml_value = f_best + 2.0 * (n - s) * float(np.sum(np.log(scale)))
    b = None
    if s:
        b = _criterion(data, lg @ lg.T, le @ le.T)[1] * scale[None, :]

    diagnostics = {
        "grad_max": grad_max,
        "start_values": [st[0] + 2.0 * (n - s) * float(np.sum(np.log(scale))) for st in starts],
        "best_start": int(best),
        "history": history,
        "identifiable": bool(identifiable),
        "null_directions": n_null,
        "scale": scale,
    }
    se_g = se_e = None
    if standard_errors:
        hess = _hessian(theta, data, par)
        w = np.linalg.eigvalsh(hess)
        diagnostics["hessian_eigenvalues"] = w
        diagnostics["min_curvature"] = float(w[0])
        se_g, se_e = _standard_errors(theta, hess, par, scale)

    fit = VCFit(
        sigma_g=0.5 * (sigma_g + sigma_g.T),
        sigma_e=0.5 * (sigma_e + sigma_e.T),
        chol_g=chol_g,
        chol_e=chol_e,
        b=b,
        reml=float(reml_value),
        converged=converged,
        iterations=iters,
        se_g=se_g,
        se_e=se_e,
        diagnostics=diagnostics,
    )
    return fit


def _standard_errors(theta, hess, par, scale):
    """Delta-method standard errors of the covariance entries.

    The covariance of the parameters is ``2 H^{-1}`` for the Hessian ``H`` of
    ``-2 l``; returns NaN matrices when ``H`` is not positive definite.
    """
    p = par.p
    w = np.linalg.eigvalsh(hess)
    if w[0] <= 1e-10 * max(1.0, w[-1]):
        nan = np.full((p, p), np.nan)
        return nan, nan.copy()
    cov_theta = 2.0 * np.linalg.inv(hess)
    d = np.diag(scale)

    def entries(th):
        lg, le = par.unpack(th)
        return np.concatenate([(d @ lg @ lg.T @ d).ravel(), (d @ le @ le.T @ d).ravel()])

    h = 1e-6
    jac = np.zeros((2 * p * p, theta.size))
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h
        jac[:, j] = (entries(theta + e) - entries(theta - e)) / (2 * h)
    var = np.einsum("ij,jk,ik->i", jac, cov_theta, jac)
    se = np.sqrt(np.clip(var, 0.0, None))
    return se[: p * p].reshape(p, p), se[p * p :].reshape(p, p)


def heritability(fit, part: TraitPartition | None = None) -> dict:
    """Trace-ratio heritability, overall and per trait block."""
    sg = fit.sigma_g if hasattr(fit, "sigma_g") else fit[0]
    se = fit.sigma_e if hasattr(fit, "sigma_e") else fit[1]

    def ratio(idx):
        num = float(np.trace(sg[np.ix_(idx, idx)]))
        den = num + float(np.trace(se[np.ix_(idx, idx)]))
        return float(np.clip(num / den, 0.0, 1.0)) if den > 0 else float("nan")

    out = {"overall": ratio(np.arange(sg.shape[0]))}
    if part is not None:
        if len(part) != sg.shape[0]:
            raise LengthMismatch(f"partition has {len(part)} labels for {sg.shape[0]} traits")
        for label in part.blocks:
            out[label] = ratio(part.indices(label))
    return out


def format_heritability(h2: dict) -> str:
    """One-line report, e.g. ``h2 = 0.61 overall; size 0.92, shape 0.71, ...``."""
    parts = [f"{k} {v:.2f}" for k, v in h2.items() if k != "overall"]
    line = f"h2 = {h2['overall']:.2f} overall"
    return line + ("; " + ", ".join(parts) if parts else "")


def sample_scores(model: VCModel, sigma_g, sigma_e, seed=0, eig=None) -> np.ndarray:
    """Draw ``A = K^{1/2} U Sigma_G^{T/2} + V Sigma_E^{T/2}`` (no fixed effects).

    ``K^{1/2}`` is the symmetric square root with negative eigenvalues clipped
    at zero. ``seed`` may be an integer or a tuple key for :func:`rng_for`.
    """
    sigma_g = np.atleast_2d(np.asarray(sigma_g, dtype=float))
    sigma_e = np.atleast_2d(np.asarray(sigma_e, dtype=float))
    p = sigma_g.shape[0]
    lam, q = eig if eig is not None else eigen_kinship(model.k)
    k_half = (q * np.sqrt(lam)) @ q.T
    key = seed if isinstance(seed, (tuple, list)) else (seed,)
    rng = rng_for(*key)
    u = rng.standard_normal((model.n, p))
    v = rng.standard_normal((model.n, p))
    return k_half @ u @ _psd_factor(sigma_g).T + v @ _psd_factor(sigma_e).T


@dataclass
class MZReport:
    groups: list[list[int]]
    rank: int
    z: np.ndarray  # n x m incidence of subjects on shared random effects
    k_reduced: np.ndarray  # m x m, K = Z K_r Z^T


def mz_reduce(model: VCModel, tol: float = 1e-10) -> MZReport:
    """Find maximally correlated groups (``K_ij = K_ii = K_jj``).

    Each group shares one random effect, giving ``K = Z K_r Z^T`` with one
    row of ``U`` per group.
    """
    k = model.k
    n = k.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    diag = np.diag(k)
    for i in range(n):
        for j in range(i + 1, n):
            if abs(k[i, j] - diag[i]) <= tol and abs(k[i, j] - diag[j]) <= tol and diag[i] > tol:
                parent[find(j)] = find(i)
    members: dict[int, list[int]] = {}
    for i in range(n):
        members.setdefault(find(i), []).append(i)
    reps = sorted(members, key=lambda r: members[r][0])
    z = np.zeros((n, len(reps)))
    for c, r in enumerate(reps):
        z[members[r], c] = 1.0
    first = [members[r][0] for r in reps]
    k_red = k[np.ix_(first, first)]
    groups = [members[r] for r in reps if len(members[r]) > 1]
    rank = int(np.linalg.matrix_rank(k, tol=1e-8 * max(1.0, np.abs(k).max(initial=0.0))))
    return MZReport(groups, rank, z, k_red)


def dense_neg2_loglik(a, k, sigma_g, sigma_e, x=None, b=None) -> float:
    """``-2 log`` (restricted) likelihood from the full ``np x np`` covariance
    ``Sigma_E (x) I + Sigma_G (x) K`` of the column-stacked ``vec(A)``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] == 1 and np.shape(k)[0] != 1:
        a = a.T
    n, p = a.shape
    omega = np.kron(sigma_e, np.eye(n)) + np.kron(sigma_g, k)
    y = a.reshape(-1, order="F")
    c = np.linalg.cholesky(omega)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    if x is None:
        r = y
        return float(logdet + r @ np.linalg.solve(omega, r) + n * p * LOG2PI)
    xbar = np.kron(np.eye(p), x)
    oinv_x = np.linalg.solve(omega, xbar)
    info = xbar.T @ oinv_x
    if b is None:
        beta = np.linalg.solve(info, oinv_x.T @ y)
        r = y - xbar @ beta
        return float(logdet + r @ np.linalg.solve(omega, r) + np.linalg.slogdet(info)[1]
                     + (n - x.shape[1]) * p * LOG2PI)
    r = y - xbar @ np.asarray(b).reshape(-1, order="F")
    return float(logdet + r @ np.linalg.solve(omega, r) + n * p * LOG2PI)


def shared_effect_fit(a, model: VCModel, report: MZReport | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Independent fit through the explicit shared-random-effect construction.

    Builds ``K = Z K_r Z^T`` from the MZ groups and maximizes the dense
    likelihood of ``vec(A)`` with a derivative-free optimizer. Intended for
    cross-checking :func:`reml_fit` on small cohorts only.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != model.n:
        a = a.T
    report = report or mz_reduce(model)
    k = report.z @ report.k_reduced @ report.z.T
    n, p = a.shape
    tril = np.tril_indices(p)
    m = len(tril[0])

    def unpack(th):
        lg = np.zeros((p, p))
        le = np.zeros((p, p))
        lg[tril] = th[:m]
        le[tril] = th[m:]
        return lg @ lg.T, le @ le.T

    def f(th):
        sg, se = unpack(th)
        try:
            return dense_neg2_loglik(a, k, sg, se, model.x)
        except np.linalg.LinAlgError:
            return np.inf

    s_cov = a.T @ a / n
    l0 = np.linalg.cholesky(0.5 * s_cov + 1e-6 * np.eye(p))
    th0 = np.concatenate([l0[tril], l0[tril]])
    res = minimize(f, th0, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 40000, "maxfev": 40000})
    res = minimize(f, res.x, method="BFGS", options={"gtol": 1e-9})
    return unpack(res.x)


def write_fit(fit: VCFit, path, partition: TraitPartition | None = None) -> None:
    Path(path).write_text(json.dumps(fit.to_json(partition), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_scores_csv(path):
    """Score CSV with a header row; returns ``(names, matrix)``."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"score file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def partition_from_header(header: Sequence[str]) -> TraitPartition:
    labels = []
    for h in header:
        if h == "l":
            labels.append("size")
        elif h.startswith("As"):
            labels.append("shape")
        elif h.startswith("Ac"):
            labels.append("connectivity")
        else:
            labels.append(h)
    return TraitPartition(labels)
