import csv
import json

import numpy as np
import pytest
from scipy import stats

from shapeconn.errors import ValidationError
from shapeconn.pedigree import KinshipMatrix
from shapeconn.simulation import (
    RESULT_HEADER,
    SimConfig,
    block_kinship,
    desk_base_kinship,
    naive_baseline,
    naive_distances,
    random_correlation,
    run_study,
)


def test_random_correlation_p1():
    assert np.array_equal(random_correlation(1, seed=3), np.ones((1, 1)))
    with pytest.raises(ValidationError):
        random_correlation(0)


def test_p2_uniform_off_diagonal_ks():
    r = np.array([random_correlation(2, seed=(0, i))[0, 1] for i in range(20000)])
    assert stats.kstest(r, stats.uniform(loc=-1, scale=2).cdf).pvalue > 0.01


def test_p4_pd_and_centered():
    draws = np.array([random_correlation(4, seed=(1, i)) for i in range(10000)])
    assert np.linalg.eigvalsh(draws).min() > 0
    assert np.abs(np.diagonal(draws, axis1=1, axis2=2) - 1).max() <= 1e-12
    np.testing.assert_array_equal(draws, np.transpose(draws, (0, 2, 1)))
    off = draws[:, np.triu_indices(4, 1)[0], np.triu_indices(4, 1)[1]]
    se = off.std(axis=0, ddof=1) / np.sqrt(len(off))
    assert np.all(np.abs(off.mean(axis=0)) < 3 * se)
    # uniform on the elliptope has Beta(p/2, p/2) marginals on (-1, 1)
    marg = stats.beta(2, 2, loc=-1, scale=2)
    assert stats.kstest(off[:, 0], marg.cdf).pvalue > 0.01
    assert stats.kstest(off[:, 5], marg.cdf).pvalue > 0.01


def test_random_correlation_deterministic():
    np.testing.assert_array_equal(random_correlation(5, seed=(2, 1)), random_correlation(5, seed=(2, 1)))
    assert not np.array_equal(random_correlation(5, seed=(2, 1)), random_correlation(5, seed=(2, 2)))


def test_block_kinship_examples():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(5, 5))
    k = m @ m.T
    np.testing.assert_array_equal(block_kinship(k, 1), k)
    np.testing.assert_array_equal(block_kinship(np.eye(2), 2), np.eye(4))
    ev = np.sort(np.linalg.eigvalsh(block_kinship(k, 3)))
    np.testing.assert_allclose(ev, np.sort(np.repeat(np.linalg.eigvalsh(k), 3)), atol=1e-10)
    km = KinshipMatrix.from_k(k)
    big = block_kinship(km, 2)
    assert big.n == 10 and len(set(big.ids)) == 10
    np.testing.assert_allclose(big.k, np.kron(np.eye(2), k))
    with pytest.raises(ValidationError):
        block_kinship(k, 0)


def test_naive_baseline_examples():
    d = naive_distances(3, 20, 20, seed=1)
    assert naive_baseline(3, 100, 20, 20, seed=1) == d.max()
    assert naive_baseline(1, 50, 10, 10) == 0.0
    assert np.all(d >= 0)
    with pytest.raises(ValidationError):
        naive_baseline(3, 50, 0, 10)


def test_naive_baseline_stable_across_seeds():
    vals = np.array([naive_baseline(3, 0.5, 200, 200, seed=s) for s in range(5)])
    assert vals.min() > 0
    assert (vals.max() - vals.min()) / vals.mean() < 0.15


def test_desk_base_kinship():
    km = desk_base_kinship()
    assert km.n == 200
    assert np.linalg.eigvalsh(km.k).min() > -1e-10
    assert np.any(np.isclose(km.k, 1.0) & ~np.eye(200, dtype=bool))


def test_sim_config_validation():
    km = desk_base_kinship(3)
    with pytest.raises(ValidationError):
        SimConfig(km, replicates=0)
    with pytest.raises(ValidationError):
        SimConfig(km, d_values=())
    with pytest.raises(ValidationError):
        SimConfig(km, p_values=(0,))
    full = SimConfig.full_scale(km)
    assert full.replicates == 100 and tuple(full.d_values) == (1, 2, 3, 4, 5)


def test_smoke_single_replicate(tmp_path):
    cfg = SimConfig(desk_base_kinship(4, seed=1), d_values=(1,), p_values=(2,), replicates=1,
                    naive_counts=(5, 5))
    res = run_study(cfg)
    assert len(res.rows) == 1
    row = res.rows[0]
    assert (row.d, row.p, row.replicate) == (1, 2, 0)
    assert row.err_g >= 0 and row.err_e >= 0
    res.write(tmp_path / "r.csv", tmp_path / "s.json")
    with (tmp_path / "r.csv").open() as fh:
        lines = list(csv.reader(fh))
    assert tuple(lines[0]) == RESULT_HEADER and len(lines) == 2
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["cells"][0]["n"] == 1


def test_study_deterministic_across_jobs():
    cfg = SimConfig(desk_base_kinship(10, seed=2), d_values=(1, 2), p_values=(2,), replicates=3,
                    naive_counts=(10, 10))
    a = run_study(cfg, jobs=1)
    b = run_study(cfg, jobs=2)
    assert a.rows == b.rows and a.thresholds == b.thresholds
    c = run_study(SimConfig(cfg.base_kinship, (1, 2), (2,), 3, seed=1, naive_counts=(10, 10)))
    assert [r.err_g for r in c.rows] != [r.err_g for r in a.rows]


def test_summary_excludes_non_converged():
    from shapeconn.simulation import SimResult, SimRow
    rows = [SimRow(1, 3, 0, 0.1, 0.2, True), SimRow(1, 3, 1, 9.0, 9.0, False), SimRow(1, 3, 2, 0.3, 0.4, True)]
    s = SimResult(rows, {3: 0.25}).summary()
    cell = s["cells"][0]
    assert cell["n"] == 3 and cell["not_converged"] == 1
    assert cell["err_g"]["max"] == 0.3
    assert cell["frac_err_g_below_threshold"] == 0.5
