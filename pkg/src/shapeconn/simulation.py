"""Finite-sample study of the variance-component estimator.

Random true covariances are correlation matrices drawn uniformly (onion
method); data are sampled from the no-fixed-effect model with kinship
``I_d (x) K``; the fit is scored by Frobenius error and compared with the
errors of a naive estimator that guesses another uniform correlation matrix.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .pedigree import KinshipMatrix, kinship, synthetic_cohort
from .variance_components import VCModel, eigen_kinship, reml_fit, rng_for, sample_scores

RESULT_HEADER = ("d", "p", "replicate", "err_g", "err_e", "converged")
THRESHOLD_PERCENTILES = {3: 0.5, 4: 0.01}


def random_correlation(p: int, seed=0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Correlation matrix uniform over the positive-definite elliptope.

    Onion construction with ``eta = 1``: start from a 2x2 matrix with
    ``r = 2 Beta(b, b) - 1``, then repeatedly append a row ``z = L w`` where
    ``L`` is the Cholesky factor of the current matrix, ``w = sqrt(y) u``,
    ``y ~ Beta(k/2, b)`` and ``u`` is uniform on the unit sphere; ``b`` starts
    at ``1 + (p - 2)/2`` and drops by one half per appended row.
    """
    if p < 1:
        raise ValidationError("dimension must be >= 1")
    if rng is None:
        rng = rng_for(*(seed if isinstance(seed, (tuple, list)) else (seed,)))
    if p == 1:
        return np.ones((1, 1))
    beta = 1.0 + (p - 2) / 2.0
    r = 2.0 * rng.beta(beta, beta) - 1.0
    c = np.array([[1.0, r], [r, 1.0]])
    for k in range(2, p):
        beta -= 0.5
        y = rng.beta(k / 2.0, beta)
        u = rng.standard_normal(k)
        u /= np.linalg.norm(u)
        w = np.sqrt(y) * u
        z = np.linalg.cholesky(c) @ w
        nxt = np.empty((k + 1, k + 1))
        nxt[:k, :k] = c
        nxt[:k, k] = z
        nxt[k, :k] = z
        nxt[k, k] = 1.0
        c = nxt
    return c


def block_kinship(k, d: int):
    """``I_d (x) K``: ``d`` unrelated copies of the base cohort."""
    if d < 1:
        raise ValidationError("d must be >= 1")
    if isinstance(k, KinshipMatrix):
        ids = tuple(f"{i}#{b}" for b in range(d) for i in k.ids) if d > 1 else k.ids
        return KinshipMatrix(ids, np.kron(np.eye(d), k.phi))
    return np.kron(np.eye(d), np.asarray(k, dtype=float))


def naive_distances(p: int, n_truth: int, n_guess: int, seed=0) -> np.ndarray:
    """Frobenius distances between truths and independent naive guesses."""
    out = np.empty((n_truth, n_guess))
    for t in range(n_truth):
        rng = rng_for(seed, 0x7A17, t)
        truth = random_correlation(p, rng=rng)
        for g in range(n_guess):
            out[t, g] = np.linalg.norm(random_correlation(p, rng=rng) - truth)
    return out


def naive_baseline(p: int, percentile: float, n_truth: int = 200, n_guess: int = 200, seed=0) -> float:
    """Empirical ``percentile`` (0-100) of the naive-estimator errors."""
    if n_truth < 1 or n_guess < 1:
        raise ValidationError("counts must be >= 1")
    return float(np.percentile(naive_distances(p, n_truth, n_guess, seed), percentile))


DESK_FAMILY_MIX = {"mz": 0.25, "dz": 0.25, "sib": 0.5, "singleton": 0.0}


def desk_base_kinship(n_families: int = 100, family_mix=None, seed: int = 0) -> KinshipMatrix:
    """Kinship among the children of a synthetic cohort (founders excluded).

    The default 100 two-child families give the 200-subject desk cohort.
    """
    ped = synthetic_cohort(n_families, family_mix or DESK_FAMILY_MIX, seed)
    return kinship(ped).subset(ped.non_founders)


@dataclass
class SimConfig:
    base_kinship: KinshipMatrix
    d_values: Sequence[int] = (1, 2, 4)
    p_values: Sequence[int] = (3,)
    replicates: int = 20
    seed: int = 0
    percentiles: dict = field(default_factory=lambda: dict(THRESHOLD_PERCENTILES))
    naive_counts: tuple[int, int] = (200, 200)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if not self.d_values or any(int(d) < 1 for d in self.d_values):
            raise ValidationError("d_values must be positive")
        if not self.p_values or any(int(p) < 1 for p in self.p_values):
            raise ValidationError("p_values must be positive")
        if min(self.naive_counts) < 1:
            raise ValidationError("naive counts must be >= 1")

    @classmethod
    def full_scale(cls, base_kinship: KinshipMatrix, seed: int = 0) -> "SimConfig":
        return cls(base_kinship, d_values=(1, 2, 3, 4, 5), p_values=(3, 4), replicates=100, seed=seed,
                   naive_counts=(1000, 1000))


@dataclass
class SimRow:
    d: int
    p: int
    replicate: int
    err_g: float
    err_e: float
    converged: bool


@dataclass
class SimResult:
    rows: list[SimRow]
    thresholds: dict

    def errors(self, d: int, p: int, which: str = "g", converged_only: bool = True) -> np.ndarray:
        return np.array([
            getattr(r, f"err_{which}") for r in self.rows
            if r.d == d and r.p == p and (r.converged or not converged_only)
        ])

    def summary(self) -> dict:
        cells = []
        for d, p in sorted({(r.d, r.p) for r in self.rows}):
            cell = {"d": d, "p": p, "n": 0, "not_converged": 0}
            sel = [r for r in self.rows if r.d == d and r.p == p]
            cell["n"] = len(sel)
            cell["not_converged"] = sum(not r.converged for r in sel)
            for which in ("g", "e"):
                e = self.errors(d, p, which)
                q = np.percentile(e, [0, 25, 50, 75, 100]).tolist() if e.size else [None] * 5
                cell[f"err_{which}"] = dict(zip(("min", "q1", "median", "q3", "max"), q))
            thr = self.thresholds.get(p)
            if thr is not None:
                e = self.errors(d, p, "g")
                cell["frac_err_g_below_threshold"] = float(np.mean(e < thr)) if e.size else None
            cells.append(cell)
        return {"cells": cells, "thresholds": {str(k): v for k, v in self.thresholds.items()}}

    def write(self, csv_path, json_path=None) -> None:
        with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_HEADER)
            for r in self.rows:
                w.writerow([r.d, r.p, r.replicate, repr(r.err_g), repr(r.err_e), int(r.converged)])
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


def _replicate(task):
    k_block, eig, d, p, rep, seed = task
    rng = rng_for(seed, d, p, rep)
    sigma_g = random_correlation(p, rng=rng)
    sigma_e = random_correlation(p, rng=rng)
    model = VCModel(k_block)
    a = sample_scores(model, sigma_g, sigma_e, seed=(seed, d, p, rep, 1), eig=eig)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = reml_fit(a, model, eig=eig, standard_errors=False)
    return SimRow(d, p, rep, float(np.linalg.norm(fit.sigma_g - sigma_g)),
                  float(np.linalg.norm(fit.sigma_e - sigma_e)), fit.converged)


def run_study(cfg: SimConfig, jobs: int = 1) -> SimResult:
    """Run every ``(d, p, replicate)`` cell.

    Each replicate draws from a generator keyed by ``(seed, d, p, replicate)``,
    so the result does not depend on ``jobs`` or scheduling order.
    """
    base = cfg.base_kinship.k if isinstance(cfg.base_kinship, KinshipMatrix) else np.asarray(cfg.base_kinship)
    rows: list[SimRow] = []
    for d in cfg.d_values:
        kb = block_kinship(base, int(d))
        eig = eigen_kinship(kb)
        tasks = [(kb, eig, int(d), int(p), rep, cfg.seed) for p in cfg.p_values for rep in range(cfg.replicates)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                rows.extend(ex.map(_replicate, tasks))
        else:
            rows.extend(map(_replicate, tasks))
    thresholds = {}
    for p in cfg.p_values:
        pct = cfg.percentiles.get(int(p))
        if pct is not None:
            thresholds[int(p)] = naive_baseline(int(p), pct, *cfg.naive_counts, seed=cfg.seed)
    return SimResult(rows, thresholds)
