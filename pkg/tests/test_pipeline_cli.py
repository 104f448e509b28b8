import configparser
import csv
import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from shapeconn import lddmm
from shapeconn.cli import main
from shapeconn.config import DEFAULTS_TEXT, load_config
from shapeconn.errors import ValidationError
from shapeconn.fixture import bundled_fixture
from shapeconn.pedigree import read_kinship
from shapeconn.pipeline import sha256_file

HERE = Path(__file__).resolve().parent
PED4 = "id,father,mother,mz_group\nf,,,\nm,,,\na,f,m,\nb,f,m,\n"
PED_MZ = "id,father,mother,mz_group\nf,,,\nm,,,\na,f,m,t1\nb,f,m,t1\n"


@pytest.fixture
def fixture_dir(tmp_path):
    dst = tmp_path / "fixture"
    shutil.copytree(bundled_fixture(), dst)
    return dst


def set_key(cfg_path, section, key, value):
    cp = configparser.ConfigParser()
    cp.read(cfg_path)
    if not cp.has_section(section):
        cp.add_section(section)
    cp.set(section, key, str(value))
    with open(cfg_path, "w") as fh:
        cp.write(fh)


def test_defaults_lists_every_key(capsys):
    assert main(["defaults"]) == 0
    text = capsys.readouterr().out
    assert text == DEFAULTS_TEXT
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    assert set(cp.sections()) == {"paths", "shape", "connectivity", "confounders", "model", "run", "simulation"}
    cfg = load_config()
    assert cfg.p_shape == 10 and cfg.lam == 0.001 and cfg.sigmas == (8, 4, 2, 1, 0.5, 0.1)


def test_config_validation(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[shape]\nlambda = -1\n")
    with pytest.raises(ValidationError, match="lambda"):
        load_config(bad).validate(need_inputs=False)
    bad.write_text("[shape]\nsteps = many\n")
    with pytest.raises(ValidationError):
        load_config(bad)
    with pytest.raises(ValidationError, match="not found"):
        load_config(tmp_path / "nope.ini")
    with pytest.raises(ValidationError, match="paths.pedigree"):
        load_config().validate()


def test_kinship_subcommand(tmp_path, capsys):
    ped = tmp_path / "ped.csv"
    ped.write_text(PED4)
    out = tmp_path / "K.csv"
    assert main(["kinship", str(ped), "--out", str(out)]) == 0
    km = read_kinship(out)
    assert km.k.shape == (4, 4)
    assert km.k[2, 3] == 0.5 and km.k[0, 2] == 0.5 and km.k[0, 1] == 0.0
    first = sha256_file(out)
    assert main(["kinship", str(ped), "--out", str(out)]) == 0
    assert sha256_file(out) == first

    mz = tmp_path / "mz.csv"
    mz.write_text(PED_MZ)
    assert main(["kinship", str(mz), "--out", str(out), "--subjects", "non-founders"]) == 0
    km = read_kinship(out)
    assert km.ids == ("a", "b") and km.k[0, 1] == 1.0


def test_kinship_missing_file(tmp_path, capsys):
    missing = tmp_path / "nowhere.csv"
    assert main(["kinship", str(missing), "--out", str(tmp_path / "K.csv")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_kinship_invalid_pedigree(tmp_path, capsys):
    ped = tmp_path / "ped.csv"
    ped.write_text("id,father,mother,mz_group\na,a,,\n")
    assert main(["kinship", str(ped), "--out", str(tmp_path / "K.csv")]) == 2


def test_stage_subcommands_on_fixture(fixture_dir, tmp_path, capsys):
    fx = fixture_dir
    out = tmp_path / "stages"
    assert main(["gpa", str(fx / "landmarks.json"), "--out", str(out / "gpa")]) == 0
    meta = json.loads((out / "gpa" / "procrustes.json").read_text())
    assert len(meta["ids"]) == 20 and meta["converged"]
    template = out / "gpa" / "template.csv"
    assert lddmm.read_landmarks(template).shape == (30, 3)

    assert main(["spd", str(fx / "timeseries.json"), "--out", str(out / "spd")]) == 0
    assert np.linalg.eigvalsh(np.loadtxt(out / "spd" / "frechet.csv", delimiter=",")).min() > 0
    assert main(["pca", str(out / "spd" / "tangents.csv"), "--p", "3", "--confounders",
                 str(fx / "confounders.csv"), "--config", str(fx / "config.ini"),
                 "--out", str(out / "pca")]) == 0
    with (out / "pca" / "scores.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["id", "A1", "A2", "A3"] and len(rows) == 21
    assert main(["pca", str(out / "spd" / "tangents.csv"), "--p", "40", "--out", str(out / "pca2")]) == 3

    assert main(["kinship", str(fx / "pedigree.csv"), "--subjects", "non-founders",
                 "--out", str(out / "K.csv")]) == 0
    # one size column plus connectivity scores from the PCA above
    ids = [r[0] for r in rows[1:]]
    sizes = dict(zip(meta["ids"], meta["log_sizes"]))
    scores = out / "scores.csv"
    with scores.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "l", "As1", "Ac1", "Ac2"])
        for sid, r in zip(ids, rows[1:]):
            w.writerow([sid, sizes[sid], r[1], r[2], r[3]])
    assert main(["vcfit", str(scores), str(out / "K.csv"), "--out", str(out / "vcfit.json")]) == 0
    fit = json.loads((out / "vcfit.json").read_text())
    assert fit["partition"] == ["size", "shape", "connectivity", "connectivity"]
    assert 0 <= fit["heritability"]["overall"] <= 1
    assert main(["cca", str(out / "vcfit.json"), "--scores", str(scores), "--out", str(out / "modes.json")]) == 0
    modes = json.loads((out / "modes.json").read_text())["modes"]
    assert [m["source"] for m in modes] == ["genetic", "environmental"]
    assert all("sigma_s" in m for m in modes)
    assert main(["cca", str(out / "vcfit.json"), "--n-modes", "2", "--out", str(out / "m2.json")]) == 2


def test_match_subcommand(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 4, (5, 3))
    lddmm.write_landmarks(x, tmp_path / "t.csv")
    lddmm.write_landmarks(x + 0.2, tmp_path / "y.csv")
    cfg = tmp_path / "c.ini"
    cfg.write_text("[shape]\nsigmas = 4, 2\nmaxiter = 200\n")
    out = tmp_path / "m.csv"
    assert main(["match", str(tmp_path / "t.csv"), str(tmp_path / "y.csv"), "--config", str(cfg),
                 "--out", str(out)]) == 0
    assert lddmm.read_landmarks(out).shape == (5, 3)
    meta = json.loads(out.with_suffix(".json").read_text())
    assert meta["template_sha256"] == sha256_file(tmp_path / "t.csv")
    assert meta["final_objective"] < meta["initial_objective"]
    assert meta["kernel"]["sigmas"] == [4.0, 2.0]
    assert main(["match", str(tmp_path / "t.csv"), str(tmp_path / "missing.csv"), "--out", str(out)]) == 2


def sim_config(tmp_path, seed=0, replicates=2):
    cfg = tmp_path / f"sim{seed}_{replicates}.ini"
    cfg.write_text(
        "[simulation]\nbase_families = 10\nd_values = 1, 2\np_values = 2\n"
        f"replicates = {replicates}\nnaive_truth = 10\nnaive_guess = 10\n[run]\nseed = {seed}\n"
    )
    return cfg


def test_simulate_subcommand(tmp_path, capsys):
    out0 = tmp_path / "s0"
    assert main(["simulate", "--config", str(sim_config(tmp_path)), "--out", str(out0)]) == 0
    summary = json.loads((out0 / "summary.json").read_text())
    assert [c["d"] for c in summary["cells"]] == [1, 2]
    assert (out0 / "errors_p2.svg").read_text().startswith("<svg")
    rows0 = (out0 / "results.csv").read_text().splitlines()
    assert rows0[0] == "d,p,replicate,err_g,err_e,converged" and len(rows0) == 5

    out1 = tmp_path / "s1"
    assert main(["simulate", "--config", str(sim_config(tmp_path)), "--seed", "5", "--out", str(out1)]) == 0
    rows1 = (out1 / "results.csv").read_text().splitlines()
    assert rows1[0] == rows0[0] and rows1[1:] != rows0[1:]
    outj = tmp_path / "sj"
    assert main(["simulate", "--config", str(sim_config(tmp_path)), "--jobs", "2", "--out", str(outj)]) == 0
    assert sha256_file(outj / "results.csv") == sha256_file(out0 / "results.csv")
    assert sha256_file(outj / "summary.json") == sha256_file(out0 / "summary.json")


def test_simulate_zero_replicates(tmp_path, capsys):
    assert main(["simulate", "--config", str(sim_config(tmp_path, replicates=0)),
                 "--out", str(tmp_path / "s")]) == 2
    assert "replicates" in capsys.readouterr().err


def test_pipeline_missing_input(fixture_dir, capsys):
    (fixture_dir / "pedigree.csv").unlink()
    assert main(["pipeline", "--config", str(fixture_dir / "config.ini")]) == 2
    assert str(fixture_dir / "pedigree.csv") in capsys.readouterr().err


def test_pipeline_truncation_too_large(fixture_dir, capsys):
    cfg = fixture_dir / "config.ini"
    set_key(cfg, "shape", "p", 25)
    assert main(["pipeline", "--config", str(cfg)]) == 3
    assert "[pca] TruncationTooLarge" in capsys.readouterr().err
    man = json.loads((fixture_dir / "out" / "manifest.json").read_text())
    assert man["status"] == "failed" and man["stage"] == "pca"
    # partial outputs are kept and hashed
    assert "kinship.csv" in man["outputs"] and "gpa/template.csv" in man["outputs"]


@pytest.fixture(scope="module")
def audited_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("sandbox")
    work = root / "work"
    shutil.copytree(bundled_fixture(), work)
    report = root / "report.json"
    env = {"PATH": os.environ.get("PATH", ""), "SHAPECONN_DECOY": "1", "OMP_NUM_THREADS": "1"}
    proc = subprocess.run(
        [sys.executable, str(HERE / "audit_runner.py"), str(report), "--", "pipeline", "--config", "config.ini"],
        cwd=work, env=env, capture_output=True, text=True, timeout=600,
    )
    assert proc.returncode == 0, proc.stderr
    return work, json.loads(report.read_text()), proc.stdout


def test_pipeline_outputs(audited_run):
    work, rep, stdout = audited_run
    assert rep["code"] == 0
    out = work / "out"
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok"
    for rel, digest in man["outputs"].items():
        assert sha256_file(out / rel) == digest
    for rel, digest in man["inputs"].items():
        assert sha256_file(work / rel) == digest
    fit = json.loads((out / "vcfit.json").read_text())
    assert fit["converged"]
    assert set(fit["heritability"]) == {"overall", "size", "shape", "connectivity"}
    modes = json.loads((out / "cca" / "modes.json").read_text())["modes"]
    assert {m["source"] for m in modes} == {"genetic", "environmental"}
    for src in ("genetic", "environmental"):
        for kind in ("shape", "conn"):
            for sign in ("minus", "plus"):
                assert (out / "displays" / f"{src}_mode1_{kind}_{sign}.csv").is_file()
        c = np.loadtxt(out / "displays" / f"{src}_mode1_conn_plus.csv", delimiter=",")
        assert np.linalg.eigvalsh(c).min() > 0
    assert any(p.suffix == ".svg" for p in (out / "figures").iterdir())
    assert "h2 overall=" in stdout


def test_pipeline_reads_only_declared_files(audited_run):
    work, rep, _ = audited_run
    man = json.loads((work / "out" / "manifest.json").read_text())
    declared = {str((work / rel).resolve()) for rel in man["inputs"]} | {str((work / "config.ini").resolve())}
    out_dir = str((work / "out").resolve())
    inside = {p for p in rep["opened"] if p.startswith(str(work.resolve()))}
    assert str((work / "pedigree.csv").resolve()) in inside
    undeclared = {p for p in inside if p not in declared and not p.startswith(out_dir)}
    assert not undeclared
    assert rep["env"] == []
