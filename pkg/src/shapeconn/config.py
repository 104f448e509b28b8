"""Pipeline configuration: one INI-style key/value file.

Every key has a default (``shapeconn defaults`` prints them all); relative
paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .lddmm import DEFAULT_LAMBDA, DEFAULT_SIGMAS, DEFAULT_STEPS, KernelSpec

DEFAULTS_TEXT = """\
# shapeconn pipeline configuration; relative paths are resolved against this file.

[paths]
# CSV with header id,father,mother,mz_group
pedigree =
# JSON: {"subjects": [{"id": ..., "file": "<L x 3 landmark csv>"}]}
landmarks =
# JSON: {"subjects": [{"id": ..., "manifest": "<per-subject run manifest json>"}]}
timeseries =
# CSV with header id,<confounder columns>; empty means intercept only
confounders =
# optional: one region label per line, in display order for heatmaps
labels =

[shape]
sigmas = 8, 4, 2, 1, 0.5, 0.1
# empty: equal weights
weights =
lambda = 0.001
steps = 10
p = 10
maxiter = 500

[connectivity]
p = 10
eps_pd = 1e-10

[confounders]
# columns treated as categorical (no squared term)
categorical =

[model]
# empty: 1e-8 * trace(block) / dim per block
ridge =
n_modes = 1
display_c = 3

[run]
seed = 0
out = out
jobs = 1

[simulation]
base_families = 100
family_mix = mz:0.25, dz:0.25, sib:0.5, singleton:0
d_values = 1, 2, 4
p_values = 3
replicates = 20
naive_truth = 200
naive_guess = 200
# true: full-scale grid (d = 1..5, p = 3, 4, 100 replicates, 1000 x 1000 naive draws)
full = false
"""


def _floats(text):
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


def _ints(text):
    return tuple(int(t) for t in text.replace(";", ",").split(",") if t.strip())


@dataclass
class PipelineConfig:
    base_dir: Path = field(default_factory=Path.cwd)
    pedigree: Path | None = None
    landmarks: Path | None = None
    timeseries: Path | None = None
    confounders: Path | None = None
    labels: Path | None = None
    sigmas: tuple[float, ...] = DEFAULT_SIGMAS
    weights: tuple[float, ...] | None = None
    lam: float = DEFAULT_LAMBDA
    steps: int = DEFAULT_STEPS
    p_shape: int = 10
    match_maxiter: int = 500
    p_conn: int = 10
    eps_pd: float = 1e-10
    categorical: tuple[str, ...] = ()
    ridge: float | None = None
    n_modes: int = 1
    display_c: float = 3.0
    seed: int = 0
    out: Path = Path("out")
    jobs: int = 1
    base_families: int = 100
    family_mix: dict = field(default_factory=lambda: {"mz": 0.25, "dz": 0.25, "sib": 0.5, "singleton": 0.0})
    d_values: tuple[int, ...] = (1, 2, 4)
    p_values: tuple[int, ...] = (3,)
    replicates: int = 20
    naive_truth: int = 200
    naive_guess: int = 200
    full: bool = False

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(self.sigmas, self.weights)

    def validate(self, need_inputs: bool = True) -> "PipelineConfig":
        if need_inputs:
            for name in ("pedigree", "landmarks", "timeseries"):
                path = getattr(self, name)
                if path is None:
                    raise ValidationError(f"config: paths.{name} is required")
                if not Path(path).is_file():
                    raise ValidationError(f"config: paths.{name} does not exist: {path}")
            for name in ("confounders", "labels"):
                path = getattr(self, name)
                if path is not None and not Path(path).is_file():
                    raise ValidationError(f"config: paths.{name} does not exist: {path}")
        checks = [
            (self.lam > 0, "shape.lambda must be > 0"),
            (self.steps >= 1, "shape.steps must be >= 1"),
            (self.p_shape >= 1, "shape.p must be >= 1"),
            (self.p_conn >= 1, "connectivity.p must be >= 1"),
            (self.match_maxiter >= 1, "shape.maxiter must be >= 1"),
            (self.eps_pd > 0, "connectivity.eps_pd must be > 0"),
            (self.ridge is None or self.ridge >= 0, "model.ridge must be >= 0"),
            (self.n_modes >= 1, "model.n_modes must be >= 1"),
            (self.display_c >= 0, "model.display_c must be >= 0"),
            (self.jobs >= 1, "run.jobs must be >= 1"),
            (self.replicates >= 1, "simulation.replicates must be >= 1"),
            (self.base_families >= 1, "simulation.base_families must be >= 1"),
            (all(d >= 1 for d in self.d_values) and self.d_values, "simulation.d_values must be positive"),
            (all(p >= 1 for p in self.p_values) and self.p_values, "simulation.p_values must be positive"),
            (self.naive_truth >= 1 and self.naive_guess >= 1, "simulation naive counts must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(f"config: {msg}")
        self.kernel  # validates bandwidths/weights
        return self


def load_config(path=None) -> PipelineConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(DEFAULTS_TEXT)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        try:
            cp.read_string(path.read_text(encoding="utf-8"), source=str(path))
        except configparser.Error as e:
            raise ValidationError(f"cannot parse {path}: {e}") from None
        base = path.resolve().parent

    def get_path(key):
        v = cp.get("paths", key).strip()
        return (base / v) if v else None

    try:
        mix = {}
        for item in cp.get("simulation", "family_mix").split(","):
            if item.strip():
                k, v = item.split(":")
                mix[k.strip()] = float(v)
        ridge = cp.get("model", "ridge").strip()
        weights = cp.get("shape", "weights").strip()
        out = Path(cp.get("run", "out").strip() or "out")
        cfg = PipelineConfig(
            base_dir=base,
            pedigree=get_path("pedigree"),
            landmarks=get_path("landmarks"),
            timeseries=get_path("timeseries"),
            confounders=get_path("confounders"),
            labels=get_path("labels"),
            sigmas=_floats(cp.get("shape", "sigmas")),
            weights=_floats(weights) if weights else None,
            lam=cp.getfloat("shape", "lambda"),
            steps=cp.getint("shape", "steps"),
            p_shape=cp.getint("shape", "p"),
            match_maxiter=cp.getint("shape", "maxiter"),
            p_conn=cp.getint("connectivity", "p"),
            eps_pd=cp.getfloat("connectivity", "eps_pd"),
            categorical=tuple(t.strip() for t in cp.get("confounders", "categorical").split(",") if t.strip()),
            ridge=float(ridge) if ridge else None,
            n_modes=cp.getint("model", "n_modes"),
            display_c=cp.getfloat("model", "display_c"),
            seed=cp.getint("run", "seed"),
            out=out if out.is_absolute() else base / out,
            jobs=cp.getint("run", "jobs"),
            base_families=cp.getint("simulation", "base_families"),
            family_mix=mix,
            d_values=_ints(cp.get("simulation", "d_values")),
            p_values=_ints(cp.get("simulation", "p_values")),
            replicates=cp.getint("simulation", "replicates"),
            naive_truth=cp.getint("simulation", "naive_truth"),
            naive_guess=cp.getint("simulation", "naive_guess"),
            full=cp.getboolean("simulation", "full"),
        )
    except (ValueError, configparser.Error) as e:
        raise ValidationError(f"config: {e}") from None
    return cfg
