"""Synthetic cohort with pedigree, landmarks, time series and confounders.

The generator draws latent size, shape and connectivity descriptors from the
variance-component model itself (:func:`sample_scores`) and renders them:
size scales an ellipsoidal landmark template, shape scores move it along
smooth displacement fields, connectivity scores move a base covariance along
symmetric directions in log space. Each subject then receives a random rigid
motion, landmark noise and Gaussian time series with its covariance.
"""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import spd
from .lddmm import write_landmarks
from .pedigree import kinship, synthetic_cohort, write_pedigree
from .simulation import random_correlation
from .variance_components import VCModel, sample_scores

FIXTURE_CONFIG = """\
[paths]
pedigree = pedigree.csv
landmarks = landmarks.json
timeseries = timeseries.json
confounders = confounders.csv
labels = labels.txt

[shape]
p = 3

[connectivity]
p = 3

[confounders]
categorical = sex

[run]
out = out
"""


def bundled_fixture() -> Path:
    """Directory of the 20-subject fixture shipped with the package."""
    return Path(str(resources.files("shapeconn") / "data" / "fixture20"))


def _sphere_points(n):
    # Fibonacci lattice on the unit sphere
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def _shape_modes(base, radii):
    u = base / radii
    m1 = np.column_stack([u[:, 0], np.zeros(len(u)), -0.5 * u[:, 2]])  # elongation
    m2 = np.column_stack([np.zeros(len(u)), np.zeros(len(u)), u[:, 0] ** 2 - 0.5])  # bending
    m3 = np.column_stack([-u[:, 1] * u[:, 2], u[:, 0] * u[:, 2], np.zeros(len(u))])  # twist
    return [m1, m2, m3]


def make_fixture(
    out_dir,
    n_families: int = 10,
    n_landmarks: int = 30,
    n_regions: int = 6,
    n_runs: int = 2,
    n_time: int = 200,
    seed: int = 0,
) -> Path:
    """Write a complete pipeline input set (and ``config.ini``) to ``out_dir``.

    Families are 80% MZ and 20% DZ twin pairs, so ``2 * n_families``
    subjects are analysed (founders appear only in the pedigree). The MZ
    pairs outnumber the seven descriptors, which keeps the likelihood bounded.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ped = synthetic_cohort(n_families, {"mz": 0.8, "dz": 0.2}, seed)
    write_pedigree(ped, out / "pedigree.csv")
    ids = ped.non_founders
    km = kinship(ped).subset(ids)

    n_shape = 3
    q = 1 + n_shape + n_shape
    sigma_g = 0.6 * random_correlation(q, seed=(seed, 1))
    sigma_e = 0.4 * random_correlation(q, seed=(seed, 2))
    latent = sample_scores(VCModel(km.k), sigma_g, sigma_e, seed=(seed, 3))

    radii = np.array([40.0, 30.0, 25.0])
    base = _sphere_points(n_landmarks) * radii
    modes = _shape_modes(base, radii)
    (out / "landmarks").mkdir(exist_ok=True)
    lm_items = []
    for i, sid in enumerate(ids):
        a = latent[i]
        x = base + sum(2.0 * a[1 + j] * modes[j] for j in range(n_shape))
        x = x * np.exp(0.08 * a[0])
        rot = Rotation.random(random_state=rng).as_matrix()
        x = x @ rot.T + rng.normal(0.0, 10.0, 3) + rng.normal(0.0, 0.2, x.shape)
        write_landmarks(x, out / "landmarks" / f"{sid}.csv")
        lm_items.append({"id": sid, "file": f"landmarks/{sid}.csv"})
    (out / "landmarks.json").write_text(json.dumps({"subjects": lm_items}, indent=2) + "\n", encoding="utf-8")

    labels = [f"R{j + 1}" for j in range(n_regions)]
    log_base = spd.matrix_log(random_correlation(n_regions, seed=(seed, 4)) + 0.2 * np.eye(n_regions))
    dirs = []
    for _ in range(n_shape):
        s = rng.standard_normal((n_regions, n_regions))
        s = 0.5 * (s + s.T)
        dirs.append(s / np.linalg.norm(s))
    ts_items = []
    for i, sid in enumerate(ids):
        a = latent[i, 1 + n_shape:]
        c = spd.matrix_exp(log_base + sum(0.4 * a[j] * dirs[j] for j in range(n_shape)))
        chol = np.linalg.cholesky(c)
        sub = out / "timeseries" / sid
        sub.mkdir(parents=True, exist_ok=True)
        runs = []
        for r in range(n_runs):
            x = rng.standard_normal((n_time, n_regions)) @ chol.T
            spd.write_matrix_csv(x, sub / f"run{r + 1}.csv")
            runs.append(f"run{r + 1}.csv")
        (sub / "runs.json").write_text(json.dumps({"runs": runs, "labels": labels}, indent=2) + "\n",
                                       encoding="utf-8")
        ts_items.append({"id": sid, "manifest": f"timeseries/{sid}/runs.json"})
    (out / "timeseries.json").write_text(json.dumps({"subjects": ts_items}, indent=2) + "\n", encoding="utf-8")

    with (out / "confounders.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "age", "sex"])
        for sid in ids:
            w.writerow([sid, f"{rng.uniform(22, 36):.1f}", int(rng.integers(0, 2))])
    # display order differs from file order on purpose
    (out / "labels.txt").write_text("\n".join(labels[::2] + labels[1::2]) + "\n", encoding="utf-8")
    (out / "config.ini").write_text(FIXTURE_CONFIG, encoding="utf-8")
    return out
