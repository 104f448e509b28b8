"""End-to-end analysis driver.

Stages, in order: kinship, gpa, match, connectivity, deconfound, pca,
scores, vcfit, cca, displays, figures. Every file written under the output
directory is listed in ``manifest.json`` with its SHA-256, next to the hashes
of every input that was read. A failing stage raises :class:`StageError`;
outputs written by earlier stages are kept and the manifest records the
failure.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cca as cca_mod
from . import lddmm, spd, svg
from .config import PipelineConfig
from .errors import LengthMismatch, StageError, ValidationError
from .pedigree import kinship, parse_pedigree, write_kinship
from .procrustes import gpa
from .tangent_stats import FROBENIUS, V_METRIC, ConfounderTable, fit_pca, regress_out, write_basis
from .variance_components import TraitPartition, VCModel, heritability, reml_fit


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_subject_manifest(path, key: str) -> list[tuple[str, Path]]:
    """``{"subjects": [{"id": ..., key: relative path}]}`` -> ``[(id, path)]``."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}")
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
        items = [(str(s["id"]), path.parent / s[key]) for s in meta["subjects"]]
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ValidationError(f"malformed manifest {path}: {e}") from None
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate subject ids in {path}")
    return items


def read_confounders(path, ids, categorical=()) -> ConfounderTable:
    """Confounder CSV (``id,<columns>``) reordered to ``ids``."""
    if path is None:
        return ConfounderTable.empty(len(ids))
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id":
        raise ValidationError(f"{path}: first column must be 'id'")
    names = rows[0][1:]
    unknown = set(categorical) - set(names)
    if unknown:
        raise ValidationError(f"categorical columns not in {path}: {sorted(unknown)}")
    table = {}
    for r in rows[1:]:
        if r:
            try:
                table[r[0]] = [float(v) for v in r[1:]]
            except ValueError as e:
                raise ValidationError(f"{path}: {e}") from None
    missing = [i for i in ids if i not in table]
    if missing:
        raise ValidationError(f"{path}: no confounders for subjects {missing[:5]}")
    z = np.array([table[i] for i in ids], dtype=float).reshape(len(ids), len(names))
    mask = np.array([nm not in categorical for nm in names], dtype=bool)
    return ConfounderTable(z, mask, list(names))


def read_labels(path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]


def _match_task(args):
    sid, kernel, template, target, lam, steps, maxiter = args
    return sid, lddmm.match(kernel, template, target, lam=lam, steps=steps, maxiter=maxiter)


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


@dataclass
class PipelineRun:
    """Bookkeeping for one run: output root, hashed inputs, current stage."""

    cfg: PipelineConfig
    out: Path
    inputs: dict = field(default_factory=dict)
    stage: str = "setup"
    results: dict = field(default_factory=dict)

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add_input(self, path) -> Path:
        path = Path(path)
        rel = os.path.relpath(path.resolve(), self.cfg.base_dir.resolve()).replace(os.sep, "/")
        self.inputs[rel] = sha256_file(path)
        return path

    def outputs(self) -> dict:
        files = sorted(p for p in self.out.rglob("*") if p.is_file() and p.name != "manifest.json")
        return {p.relative_to(self.out).as_posix(): sha256_file(p) for p in files}

    def write_manifest(self, status: str, error: str | None = None) -> None:
        from . import __version__

        cfg = self.cfg
        settings = {
            "kernel": {"sigmas": list(cfg.sigmas), "weights": None if cfg.weights is None else list(cfg.weights)},
            "lambda": cfg.lam, "steps": cfg.steps, "p_shape": cfg.p_shape, "p_conn": cfg.p_conn,
            "match_maxiter": cfg.match_maxiter, "eps_pd": cfg.eps_pd, "categorical": list(cfg.categorical),
            "ridge": cfg.ridge, "n_modes": cfg.n_modes, "display_c": cfg.display_c, "seed": cfg.seed,
        }
        man = {"version": __version__, "status": status, "stage": self.stage, "settings": settings,
               "inputs": dict(sorted(self.inputs.items())), "outputs": self.outputs()}
        if error is not None:
            man["error"] = error
        _dump_json(man, self.out / "manifest.json")


def run_pipeline(cfg: PipelineConfig, jobs: int | None = None) -> dict:
    """Run every stage for the cohort described by ``cfg``.

    Returns a summary (heritability, mode correlations, output directory).
    ``jobs`` overrides ``cfg.jobs`` for the per-subject matching.
    """
    cfg.validate()
    jobs = cfg.jobs if jobs is None else int(jobs)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    run = PipelineRun(cfg, out)
    try:
        _stages(run, jobs)
    except Exception as e:
        run.write_manifest("failed", f"{type(e).__name__}: {e}")
        raise StageError(run.stage, e) from e
    run.write_manifest("ok")
    return run.results


def _stages(run: PipelineRun, jobs: int) -> None:
    cfg = run.cfg

    run.stage = "inputs"
    lm_items = read_subject_manifest(run.add_input(cfg.landmarks), "file")
    ts_items = dict(read_subject_manifest(run.add_input(cfg.timeseries), "manifest"))
    ids = [i for i, _ in lm_items]
    missing = [i for i in ids if i not in ts_items]
    if missing:
        raise ValidationError(f"no time series for subjects {missing[:5]}")
    if cfg.confounders is not None:
        run.add_input(cfg.confounders)
    conf = read_confounders(cfg.confounders, ids, cfg.categorical)
    n = len(ids)

    run.stage = "kinship"
    ped = parse_pedigree(run.add_input(cfg.pedigree))
    unknown = [i for i in ids if i not in ped.index]
    if unknown:
        raise ValidationError(f"subjects missing from the pedigree: {unknown[:5]}")
    km = kinship(ped).subset(ids)
    write_kinship(km, run.path("kinship.csv"))

    run.stage = "gpa"
    shapes = [lddmm.read_landmarks(run.add_input(p)) for _, p in lm_items]
    pr = gpa(shapes, remove_scale=True)
    # match at the cohort's typical physical size so kernel widths keep their units
    ref_scale = float(np.exp(np.mean(pr.log_sizes)))
    template = pr.template * ref_scale
    lddmm.write_landmarks(template, run.path("gpa/template.csv"))
    _dump_json({"ids": ids, "log_sizes": pr.log_sizes.tolist(), "reference_scale": ref_scale,
                "iterations": pr.iterations, "converged": pr.converged}, run.path("gpa/procrustes.json"))

    run.stage = "match"
    kernel = cfg.kernel
    tasks = [(sid, kernel, template, pr.aligned[i] * ref_scale, cfg.lam, cfg.steps, cfg.match_maxiter)
             for i, sid in enumerate(ids)]
    matches = dict(_map(_match_task, tasks, jobs))
    t_hash = sha256_file(run.out / "gpa/template.csv")
    opt = {"method": "L-BFGS-B", "maxiter": cfg.match_maxiter, "gtol": 1e-8}
    for sid in ids:
        lddmm.write_momenta(matches[sid], run.path(f"match/{sid}.csv"), kernel=kernel, lam=cfg.lam,
                            steps=cfg.steps, template_hash=t_hash, optimizer=opt)
    momenta = np.stack([lddmm.shape_tangent_vector(matches[sid].momenta) for sid in ids])

    run.stage = "connectivity"
    covs, region_labels = [], None
    for sid in ids:
        mpath = Path(ts_items[sid])
        runs, labels = spd.read_timeseries_manifest(run.add_input(mpath))
        for r in json.loads(mpath.read_text(encoding="utf-8"))["runs"]:
            run.add_input(mpath.parent / r)
        if region_labels is None:
            region_labels = labels
        elif labels is not None and list(labels) != list(region_labels):
            raise ValidationError(f"subject {sid}: region labels differ from the first subject")
        res = spd.covariance_from_runs(runs, cfg.eps_pd, labels)
        covs.append(res.matrix)
        spd.write_matrix_csv(res.matrix, run.path(f"connectivity/cov/{sid}.csv"))
    k_regions = covs[0].shape[0]
    if region_labels is None:
        region_labels = [str(j) for j in range(k_regions)]
    frechet = spd.frechet_mean(covs)
    spd.write_matrix_csv(frechet, run.path("connectivity/frechet.csv"))
    tangents = np.stack([spd.tangent_coords(c, frechet).vector for c in covs])

    run.stage = "deconfound"
    log_size = regress_out(pr.log_sizes, conf)
    momenta_dc = regress_out(momenta, conf)
    tangents_dc = regress_out(tangents, conf)

    run.stage = "pca"
    metric = lddmm.v_metric(kernel, template)
    gram = lddmm.v_gram(kernel, template, [m.reshape(template.shape) for m in momenta_dc])
    shape_basis, shape_scores = fit_pca(momenta_dc, V_METRIC, cfg.p_shape, gram=gram, metric_tensor=metric)
    conn_basis, conn_scores = fit_pca(tangents_dc, FROBENIUS, cfg.p_conn)
    write_basis(shape_basis, run.path("pca/shape_basis.csv"))
    write_basis(conn_basis, run.path("pca/connectivity_basis.csv"))

    run.stage = "scores"
    raw = np.column_stack([log_size, shape_scores.scores, conn_scores.scores])
    header = ["l", *(f"As{j + 1}" for j in range(cfg.p_shape)), *(f"Ac{j + 1}" for j in range(cfg.p_conn))]
    scale = raw.std(axis=0, ddof=1)
    if np.any(scale <= 0):
        raise ValidationError(f"descriptor columns with zero variance: {[header[j] for j in np.flatnonzero(scale <= 0)]}")
    with run.path("scores.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *header])
        for sid, row in zip(ids, raw):
            w.writerow([sid, *(repr(float(v)) for v in row)])
    _dump_json({"columns": header, "scale": scale.tolist()}, run.path("scores.json"))
    part = TraitPartition(["size"] + ["shape"] * cfg.p_shape + ["connectivity"] * cfg.p_conn)

    run.stage = "vcfit"
    fit = reml_fit(raw / scale, VCModel(km.k))
    d = np.diag(scale)
    sigmas_raw = {"genetic": d @ fit.sigma_g @ d, "environmental": d @ fit.sigma_e @ d}
    h2 = heritability(fit, part)
    fit_json = fit.to_json(part)
    fit_json["standardized"] = True
    fit_json["scale"] = scale.tolist()
    fit_json["sigma_g_raw"] = sigmas_raw["genetic"].tolist()
    fit_json["sigma_e_raw"] = sigmas_raw["environmental"].tolist()
    fit_json["ids"] = ids
    _dump_json(fit_json, run.path("vcfit.json"))

    run.stage = "cca"
    i_s, i_c = part.indices("shape"), part.indices("connectivity")
    mode_items, all_modes = [], {}
    for source, sig in sigmas_raw.items():
        modes = cca_mod.cca_modes(sig, part, cfg.n_modes, cfg.ridge, source=source)
        all_modes[source] = modes
        for m in modes:
            s_s = cca_mod.mode_sigma(raw[:, i_s], m.theta_s)
            s_c = cca_mod.mode_sigma(raw[:, i_c], m.theta_c)
            mode_items.append((m, s_s, s_c))
    cca_mod.write_modes([m for m, _, _ in mode_items], run.path("cca/modes.json"),
                        sigmas=[(s, c) for _, s, c in mode_items])

    run.stage = "displays"
    order = None
    if cfg.labels is not None:
        wanted = read_labels(run.add_input(cfg.labels))
        pos = {lab: j for j, lab in enumerate(region_labels)}
        if sorted(wanted) != sorted(pos):
            raise ValidationError("label file must list every region label exactly once")
        order = [pos[lab] for lab in wanted]
    heat = []
    for m, s_s, s_c in mode_items:
        disp = cca_mod.mode_displays(m, shape_basis, conn_basis, template, frechet, kernel, s_s, s_c,
                                     c=cfg.display_c, steps=cfg.steps)
        stem = f"displays/{m.source}_mode{m.component_index + 1}"
        lddmm.write_landmarks(disp.shape_minus, run.path(f"{stem}_shape_minus.csv"))
        lddmm.write_landmarks(disp.shape_plus, run.path(f"{stem}_shape_plus.csv"))
        spd.write_matrix_csv(disp.conn_minus, run.path(f"{stem}_conn_minus.csv"))
        spd.write_matrix_csv(disp.conn_plus, run.path(f"{stem}_conn_plus.csv"))
        heat += [(f"{stem}_conn_minus", disp.conn_minus), (f"{stem}_conn_plus", disp.conn_plus)]
    sigma_size = float(np.std(log_size, ddof=1))
    for source, sig in sigmas_raw.items():
        sd = cca_mod.size_regression_display(sig, part, conn_basis, frechet, sigma_size, c=cfg.display_c)
        stem = f"displays/{source}_size"
        spd.write_matrix_csv(sd.conn_minus, run.path(f"{stem}_conn_minus.csv"))
        spd.write_matrix_csv(sd.conn_plus, run.path(f"{stem}_conn_plus.csv"))
        _dump_json({"beta": sd.beta.tolist(), "sigma_size": sd.sigma_size, "c": sd.c}, run.path(f"{stem}.json"))
        heat += [(f"{stem}_conn_minus", sd.conn_minus), (f"{stem}_conn_plus", sd.conn_plus)]

    run.stage = "figures"
    corr = np.corrcoef(raw, rowvar=False)
    svg.heatmap(corr, run.path("figures/descriptor_correlation.svg"), labels=header, title="descriptors")
    svg.heatmap(fit.sigma_g, run.path("figures/sigma_g.svg"), labels=header, title="Sigma_G (standardized)")
    svg.heatmap(fit.sigma_e, run.path("figures/sigma_e.svg"), labels=header, title="Sigma_E (standardized)")
    for stem, mat in heat:
        name = stem.split("/", 1)[1]
        svg.heatmap(mat - frechet, run.path(f"figures/{name}.svg"), labels=region_labels, order=order,
                    title=f"{name} minus Frechet mean")

    run.stage = "done"
    run.results.update({
        "out": str(run.out),
        "n": n,
        "heritability": h2,
        "reml": fit.reml,
        "converged": fit.converged,
        "modes": {src: [m.correlation for m in ms] for src, ms in all_modes.items()},
    })
