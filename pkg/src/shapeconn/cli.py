"""Command line interface.

Every analysis stage is a subcommand; ``pipeline`` chains them from one
config file and ``defaults`` prints that file's full schema with defaults.
Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, lddmm, spd, svg
from .cca import cca_modes, mode_sigma, write_modes
from .config import DEFAULTS_TEXT, load_config
from .errors import NumericalError, StageError, ValidationError
from .pedigree import kinship, parse_pedigree, read_kinship, write_kinship
from .pipeline import read_confounders, read_subject_manifest, run_pipeline, sha256_file
from .procrustes import gpa
from .simulation import SimConfig, desk_base_kinship, run_study
from .tangent_stats import FROBENIUS, V_METRIC, fit_pca, regress_out, write_basis
from .variance_components import TraitPartition, VCModel, partition_from_header, reml_fit, write_fit

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _read_table(path):
    """CSV with a header row and an optional leading ``id`` column."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValidationError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    ids = None
    if header[0] == "id":
        ids = [r[0] for r in body]
        header, body = header[1:], [r[1:] for r in body]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from None
    return ids, header, data


def _write_table(path, ids, header, data) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["id"] if ids is not None else []) + list(header))
        for i, row in enumerate(np.atleast_2d(data)):
            w.writerow(([ids[i]] if ids is not None else []) + [repr(float(v)) for v in row])


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    return cfg


def cmd_kinship(args):
    ped = parse_pedigree(args.pedigree)
    km = kinship(ped)
    if args.subjects == "non-founders":
        km = km.subset(ped.non_founders)
    write_kinship(km, args.out)
    print(f"wrote {km.n} x {km.n} relatedness matrix to {args.out}")


def cmd_gpa(args):
    items = read_subject_manifest(args.manifest, "file")
    shapes = [lddmm.read_landmarks(p) for _, p in items]
    res = gpa(shapes, remove_scale=not args.keep_scale)
    out = _outdir(args.out)
    lddmm.write_landmarks(res.template, out / "template.csv")
    (out / "aligned").mkdir(exist_ok=True)
    for (sid, _), x in zip(items, res.aligned):
        lddmm.write_landmarks(x, out / "aligned" / f"{sid}.csv")
    meta = {"ids": [i for i, _ in items], "log_sizes": res.log_sizes.tolist(),
            "rotations": res.rotations.tolist(), "translations": res.translations.tolist(),
            "iterations": res.iterations, "converged": res.converged}
    (out / "procrustes.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"aligned {len(items)} shapes in {res.iterations} iterations")


def cmd_match(args):
    cfg = _config(args).validate(need_inputs=False)
    template = lddmm.read_landmarks(args.template)
    target = lddmm.read_landmarks(args.target)
    res = lddmm.match(cfg.kernel, template, target, lam=cfg.lam, steps=cfg.steps, maxiter=cfg.match_maxiter)
    lddmm.write_momenta(res, args.out, kernel=cfg.kernel, lam=cfg.lam, steps=cfg.steps,
                        template_hash=sha256_file(args.template),
                        optimizer={"method": "L-BFGS-B", "maxiter": cfg.match_maxiter, "gtol": 1e-8})
    print(f"objective {res.initial_objective:.6g} -> {res.objective:.6g} in {res.iterations} iterations")


def cmd_spd(args):
    cfg = _config(args).validate(need_inputs=False)
    items = read_subject_manifest(args.manifest, "manifest")
    out = _outdir(args.out)
    (out / "cov").mkdir(exist_ok=True)
    covs = []
    for sid, mpath in items:
        runs, labels = spd.read_timeseries_manifest(mpath)
        c = spd.covariance_from_runs(runs, cfg.eps_pd, labels).matrix
        spd.write_matrix_csv(c, out / "cov" / f"{sid}.csv")
        covs.append(c)
    f = spd.frechet_mean(covs)
    spd.write_matrix_csv(f, out / "frechet.csv")
    vecs = np.stack([spd.tangent_coords(c, f).vector for c in covs])
    _write_table(out / "tangents.csv", [i for i, _ in items], [f"t{j + 1}" for j in range(vecs.shape[1])], vecs)
    print(f"{len(covs)} covariance matrices of size {f.shape[0]}; tangents in {out / 'tangents.csv'}")


def cmd_pca(args):
    cfg = _config(args).validate(need_inputs=False)
    ids, _, data = _read_table(args.vectors)
    if args.confounders:
        if ids is None:
            raise ValidationError("an id column is required to match confounders")
        data = regress_out(data, read_confounders(args.confounders, ids, cfg.categorical))
    p = args.p if args.p is not None else (cfg.p_shape if args.metric == "v-metric" else cfg.p_conn)
    if args.metric == "v-metric":
        if not args.template:
            raise ValidationError("--template is required for the V-metric")
        template = lddmm.read_landmarks(args.template)
        gram = lddmm.v_gram(cfg.kernel, template, [m.reshape(template.shape) for m in data])
        basis, scores = fit_pca(data, V_METRIC, p, gram=gram, metric_tensor=lddmm.v_metric(cfg.kernel, template))
    else:
        basis, scores = fit_pca(data, FROBENIUS, p)
    out = _outdir(args.out)
    write_basis(basis, out / "basis.csv")
    _write_table(out / "scores.csv", ids, [f"A{j + 1}" for j in range(p)], scores.scores)
    print(f"{basis.metric} PCA: explained variance {np.round(basis.explained_variance, 6).tolist()}")


def cmd_vcfit(args):
    ids, header, a = _read_table(args.scores)
    km = read_kinship(args.kinship)
    if ids is not None:
        km = km.subset(ids)
    elif km.n != a.shape[0]:
        raise ValidationError(f"kinship has {km.n} rows, scores have {a.shape[0]}")
    part = partition_from_header(header)
    fit = reml_fit(a, VCModel(km.k))
    write_fit(fit, args.out, part)
    h2 = fit.to_json(part)["heritability"]
    print("h2 " + ", ".join(f"{k}={v:.3f}" for k, v in h2.items()) + ("" if fit.converged else " (not converged)"))


def cmd_cca(args):
    path = Path(args.fit)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    fit = json.loads(path.read_text(encoding="utf-8"))
    part = TraitPartition(fit["partition"])
    sources = ["genetic", "environmental"] if args.source == "both" else [args.source]
    raw = None
    if args.scores:
        _, _, raw = _read_table(args.scores)
    modes, sigmas = [], []
    for src in sources:
        key = "sigma_g" if src == "genetic" else "sigma_e"
        sigma = np.array(fit.get(key + "_raw", fit[key]), dtype=float)
        for m in cca_modes(sigma, part, args.n_modes, args.ridge, source=src):
            modes.append(m)
            if raw is not None:
                sigmas.append((mode_sigma(raw[:, part.indices("shape")], m.theta_s),
                               mode_sigma(raw[:, part.indices("connectivity")], m.theta_c)))
    write_modes(modes, args.out, sigmas if raw is not None else None)
    for m in modes:
        print(f"{m.source} mode {m.component_index + 1}: correlation {m.correlation:.4f}")


def cmd_simulate(args):
    cfg = _config(args).validate(need_inputs=False)
    base = desk_base_kinship(cfg.base_families, cfg.family_mix, seed=cfg.seed)
    if cfg.full:
        sim = SimConfig.full_scale(base, seed=cfg.seed)
    else:
        sim = SimConfig(base, d_values=cfg.d_values, p_values=cfg.p_values, replicates=cfg.replicates,
                        seed=cfg.seed, naive_counts=(cfg.naive_truth, cfg.naive_guess))
    res = run_study(sim, jobs=cfg.jobs)
    out = _outdir(args.out)
    res.write(out / "results.csv", out / "summary.json")
    for p in sorted({r.p for r in res.rows}):
        groups = {f"d={d}": res.errors(d, p, "g") for d in sorted({r.d for r in res.rows if r.p == p})}
        svg.boxplot(groups, out / f"errors_p{p}.svg", threshold=res.thresholds.get(p),
                    title=f"Frobenius error of Sigma_G, p = {p}")
    for cell in res.summary()["cells"]:
        print(f"d={cell['d']} p={cell['p']}: median err_g {cell['err_g']['median']:.4f}, "
              f"err_e {cell['err_e']['median']:.4f}, not converged {cell['not_converged']}")


def cmd_pipeline(args):
    cfg = _config(args)
    if args.out is not None:
        cfg.out = Path(args.out)
    res = run_pipeline(cfg)
    h2 = res["heritability"]
    print("h2 " + ", ".join(f"{k}={v:.3f}" for k, v in h2.items()))
    print(f"outputs and manifest in {res['out']}")


def cmd_defaults(args):
    sys.stdout.write(DEFAULTS_TEXT)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shapeconn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, config=True, out=None, jobs=False, seed=False):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        if config:
            p.add_argument("--config", help="configuration file (see `shapeconn defaults`)")
        if out is not None:
            p.add_argument("--out", default=out, help=f"output path (default: {out})")
        if jobs:
            p.add_argument("--jobs", type=int, help="worker processes")
        if seed:
            p.add_argument("--seed", type=int, help="random seed")
        return p

    p = add("kinship", cmd_kinship, "relatedness matrix K = 2 Phi from a pedigree CSV", config=False, out="K.csv")
    p.add_argument("pedigree")
    p.add_argument("--subjects", choices=["all", "non-founders"], default="all")

    p = add("gpa", cmd_gpa, "generalized Procrustes alignment of a landmark manifest", config=False, out="gpa")
    p.add_argument("manifest")
    p.add_argument("--keep-scale", action="store_true")

    p = add("match", cmd_match, "LDDMM registration of a template onto a target", out="momenta.csv")
    p.add_argument("template")
    p.add_argument("target")

    p = add("spd", cmd_spd, "covariances, Frechet mean and tangent vectors from a time-series manifest",
            out="spd")
    p.add_argument("manifest")

    p = add("pca", cmd_pca, "principal components of tangent vectors", out="pca")
    p.add_argument("vectors", help="CSV with header (optional leading id column)")
    p.add_argument("--metric", choices=["frobenius", "v-metric"], default="frobenius")
    p.add_argument("--p", type=int)
    p.add_argument("--template", help="landmark template (V-metric only)")
    p.add_argument("--confounders", help="confounder CSV to regress out first")

    p = add("vcfit", cmd_vcfit, "REML fit of genetic and environmental covariances", config=False,
            out="vcfit.json")
    p.add_argument("scores", help="score CSV with header l,As1..,Ac1.. (optional leading id column)")
    p.add_argument("kinship", help="relatedness CSV as written by `kinship`")

    p = add("cca", cmd_cca, "canonical shape-connectivity modes of a fitted covariance", config=False,
            out="modes.json")
    p.add_argument("fit", help="fit JSON as written by `vcfit` or `pipeline`")
    p.add_argument("--source", choices=["genetic", "environmental", "both"], default="both")
    p.add_argument("--n-modes", type=int, default=1)
    p.add_argument("--ridge", type=float)
    p.add_argument("--scores", help="raw score CSV, to report mode standard deviations")

    add("simulate", cmd_simulate, "finite-sample study of the variance-component estimator", out="simulation",
        jobs=True, seed=True)

    add("pipeline", cmd_pipeline, "full analysis from a config file", out=None, jobs=True, seed=True) \
        .add_argument("--out", help="output directory (overrides run.out)")

    add("defaults", cmd_defaults, "print the configuration schema with every default", config=False)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except StageError as e:
        if isinstance(e.cause, (NumericalError, np.linalg.LinAlgError)):
            code = EXIT_NUMERICAL
        elif isinstance(e.cause, (ValidationError, OSError)):
            code = EXIT_VALIDATION
        else:
            raise
        print(f"error: {e}", file=sys.stderr)
        return code
    except (ValidationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
