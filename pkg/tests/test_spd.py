import json

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_spd, random_sym
from shapeconn import spd
from shapeconn.errors import (
    DegenerateChannel,
    DimensionMismatch,
    EmptySample,
    LengthMismatch,
    NotPositiveDefinite,
)

E = np.e


def test_log_exp_small_cases():
    np.testing.assert_array_equal(spd.matrix_log(np.eye(3)), np.zeros((3, 3)))
    np.testing.assert_allclose(spd.matrix_log(np.diag([E, 1.0])), np.diag([1.0, 0.0]), atol=1e-15)
    np.testing.assert_array_equal(spd.matrix_exp(np.zeros((2, 2))), np.eye(2))
    np.testing.assert_allclose(spd.matrix_exp(np.diag([1.0, 0.0])), np.diag([E, 1.0]), rtol=1e-15)


def test_log_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite) as info:
        spd.matrix_log(np.diag([1.0, -0.5]))
    assert info.value.min_eigenvalue == pytest.approx(-0.5)
    with pytest.raises(NotPositiveDefinite):
        spd.matrix_log(np.diag([1.0, 1e-12]))


@pytest.mark.parametrize("seed", range(20))
def test_round_trips_and_scipy_oracle(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 9))
    c = random_spd(rng, k, cond=1e3)
    log_c = spd.matrix_log(c)
    np.testing.assert_allclose(log_c, sla.logm(c, disp=False)[0].real, atol=1e-10)
    np.testing.assert_allclose(spd.matrix_exp(log_c), c, rtol=1e-8, atol=1e-8 * np.abs(c).max())
    s = random_sym(rng, k)
    np.testing.assert_allclose(spd.matrix_exp(s), sla.expm(s), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(spd.matrix_log(spd.matrix_exp(s)), s, atol=1e-8)


def test_logeuclid_distance_examples():
    rng = np.random.default_rng(0)
    c = random_spd(rng, 4)
    assert spd.logeuclid_distance(c, c) == 0.0
    assert spd.logeuclid_distance(np.diag([E, 1.0]), np.eye(2)) == pytest.approx(1.0, abs=1e-15)
    for _ in range(20):
        a, b = random_spd(rng, 5), random_spd(rng, 5)
        oracle = np.linalg.norm(sla.logm(a, disp=False)[0].real - sla.logm(b, disp=False)[0].real)
        assert spd.logeuclid_distance(a, b) == pytest.approx(oracle, abs=1e-10)
        assert spd.logeuclid_distance(a, b) == pytest.approx(spd.logeuclid_distance(b, a), abs=1e-14)
    with pytest.raises(DimensionMismatch):
        spd.logeuclid_distance(np.eye(2), np.eye(3))


def test_alt_distance_examples():
    rng = np.random.default_rng(1)
    c = random_spd(rng, 3)
    for metric in spd.METRICS:
        assert spd.alt_distance(metric, c, c) == pytest.approx(0.0, abs=1e-12)
    for a in (0.3, 2.0, 7.5):
        assert spd.alt_distance("affine-invariant", a * np.eye(4), np.eye(4)) == pytest.approx(
            2.0 * abs(np.log(a)), abs=1e-12)
    assert spd.alt_distance("cholesky", np.diag([4.0, 1.0]), np.eye(2)) == pytest.approx(1.0, abs=1e-15)
    assert spd.alt_distance("square-root", np.diag([4.0, 1.0]), np.eye(2)) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(Exception):
        spd.alt_distance("bogus", c, c)


def test_affine_invariant_against_generalized_eigenvalues():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = random_spd(rng, 4), random_spd(rng, 4)
        w = sla.eigh(b, a, eigvals_only=True)
        assert spd.alt_distance("affine-invariant", a, b) == pytest.approx(np.sqrt(np.sum(np.log(w) ** 2)), rel=1e-10)


def test_affine_invariant_congruence_invariance():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = random_spd(rng, 4), random_spd(rng, 4)
        m = rng.standard_normal((4, 4)) + 2 * np.eye(4)
        d0 = spd.alt_distance("affine-invariant", a, b)
        d1 = spd.alt_distance("affine-invariant", m @ a @ m.T, m @ b @ m.T)
        assert d1 == pytest.approx(d0, abs=1e-8)


@pytest.mark.parametrize("metric", spd.METRICS)
def test_triangle_inequality(metric):
    rng = np.random.default_rng(4)
    for _ in range(1000):
        a, b, c = (random_spd(rng, 3, cond=20.0) for _ in range(3))
        dab, dbc, dac = (spd.alt_distance(metric, x, y) for x, y in ((a, b), (b, c), (a, c)))
        assert dac <= dab + dbc + 1e-10


def test_vec_sym_hand_example():
    v = spd.vec_sym(np.array([[1.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(v, [1.0, 3.0, 2.0 * np.sqrt(2.0)], rtol=0, atol=1e-15)
    assert v @ v == pytest.approx(18.0, abs=1e-14)
    np.testing.assert_array_equal(spd.vec_sym(np.zeros((3, 3))), np.zeros(6))


def test_vec_sym_layout():
    m = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    r2 = np.sqrt(2.0)
    np.testing.assert_allclose(spd.vec_sym(m), [1, 4, 6, 2 * r2, 3 * r2, 5 * r2], atol=1e-15)


def test_vec_sym_isometry_sweep():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        k = int(rng.integers(2, 21))
        m = random_sym(rng, k)
        v = spd.vec_sym(m)
        assert abs(np.linalg.norm(v) - np.linalg.norm(m)) < 1e-12


def assert_round_trip(m):
    back = spd.unvec_sym(spd.vec_sym(m))
    # diagonal bit-exact, off-diagonal within one unit in the last place
    assert np.array_equal(np.diag(back), np.diag(m))
    np.testing.assert_array_max_ulp(back, m, maxulp=1)


def test_sqrt2_scaling_is_not_injective():
    # two adjacent doubles share fl(sqrt(2) x), so no decoder can be bit-exact
    x = 1.5
    y = np.nextafter(x, 2.0)
    assert x * np.sqrt(2.0) == y * np.sqrt(2.0)
    assert_round_trip(np.array([[0.0, x], [x, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_unvec_inverse(k, seed):
    rng = np.random.default_rng(seed)
    m = random_sym(rng, k)
    assert_round_trip(m)
    t = spd.SymTangent.from_matrix(m)
    np.testing.assert_array_max_ulp(spd.unvec_sym(t.vector), t.matrix, maxulp=1)
    v = spd.vec_sym(m)
    np.testing.assert_array_max_ulp(spd.vec_sym(spd.unvec_sym(v)), v, maxulp=1)


def test_round_trip_diagonal_matrix_exact():
    m = np.diag([1.0, 2.5, -4.0])
    assert np.array_equal(spd.unvec_sym(spd.vec_sym(m)), m)


def test_unvec_bad_length():
    with pytest.raises(LengthMismatch):
        spd.unvec_sym(np.zeros(5))


def test_chart_consistency():
    rng = np.random.default_rng(6)
    for _ in range(50):
        a, b = random_spd(rng, 5), random_spd(rng, 5)
        via_vec = np.linalg.norm(spd.vec_sym(spd.matrix_log(a)) - spd.vec_sym(spd.matrix_log(b)))
        assert spd.logeuclid_distance(a, b) == pytest.approx(via_vec, abs=1e-10)


def test_frechet_mean_examples():
    rng = np.random.default_rng(7)
    c = random_spd(rng, 3)
    c = spd.symmetrize(c)
    assert np.array_equal(spd.frechet_mean([c]), c)
    np.testing.assert_allclose(spd.frechet_mean([c, c]), c, rtol=1e-12)
    np.testing.assert_allclose(spd.frechet_mean([np.diag([E**2, 1.0]), np.eye(2)]), np.diag([E, 1.0]), rtol=1e-14)
    with pytest.raises(EmptySample):
        spd.frechet_mean([])
    with pytest.raises(DimensionMismatch):
        spd.frechet_mean([np.eye(2), np.eye(3)])


def _sum_sq(cs, m):
    return sum(spd.logeuclid_distance(c, m) ** 2 for c in cs)


def test_frechet_mean_local_minimality():
    rng = np.random.default_rng(8)
    cs = [random_spd(rng, 4) for _ in range(5)]
    f = spd.frechet_mean(cs)
    base = _sum_sq(cs, f)
    log_f = spd.matrix_log(f)
    for _ in range(100):
        s = random_sym(rng, 4)
        eps = 10 ** rng.uniform(-4, -1)
        assert _sum_sq(cs, spd.matrix_exp(log_f + eps * s / np.linalg.norm(s))) > base


def test_frechet_mean_permutation_and_orthogonal_equivariance():
    rng = np.random.default_rng(9)
    cs = [random_spd(rng, 4) for _ in range(6)]
    f = spd.frechet_mean(cs)
    np.testing.assert_allclose(spd.frechet_mean(cs[::-1]), f, rtol=1e-12)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    fq = spd.frechet_mean([q @ c @ q.T for c in cs])
    np.testing.assert_allclose(fq, q @ f @ q.T, atol=1e-8)


def test_tangent_and_reconstruct():
    rng = np.random.default_rng(10)
    c, f = random_spd(rng, 4), random_spd(rng, 4)
    assert np.allclose(spd.tangent_coords(c, c).matrix, 0.0, atol=1e-14)
    np.testing.assert_allclose(spd.tangent_coords(c, np.eye(4)).matrix, spd.matrix_log(c), atol=1e-14)
    t = spd.tangent_coords(c, f)
    np.testing.assert_allclose(spd.reconstruct(t, f), c, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(spd.reconstruct(t.vector, f), c, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(spd.reconstruct(np.zeros(10), f), f, rtol=1e-12)
    v = spd.tangent_coords(random_spd(rng, 4), f)
    assert not np.allclose(spd.reconstruct(2 * v.matrix, f), 2 * spd.reconstruct(v, f))
    with pytest.raises(DimensionMismatch):
        spd.reconstruct(np.zeros((3, 3)), f)
    with pytest.raises(DimensionMismatch):
        spd.tangent_coords(c, np.eye(3))


def test_covariance_from_runs_monte_carlo():
    rng = np.random.default_rng(11)
    res = spd.covariance_from_runs([rng.standard_normal((10_000, 3))])
    off = res.matrix - np.diag(np.diag(res.matrix))
    assert np.abs(off).max() < 0.05
    np.testing.assert_allclose(np.diag(res.matrix), 1.0, atol=1e-12)
    assert not res.floored


def test_covariance_from_runs_matches_corrcoef():
    rng = np.random.default_rng(12)
    runs = [rng.standard_normal((50, 4)) @ rng.standard_normal((4, 4)) for _ in range(3)]
    expected = np.mean([np.corrcoef(r, rowvar=False) for r in runs], axis=0)
    np.testing.assert_allclose(spd.covariance_from_runs(runs).matrix, expected, atol=1e-12)
    one = spd.covariance_from_runs(runs[:1]).matrix
    np.testing.assert_allclose(spd.covariance_from_runs([runs[0], runs[0]]).matrix, one, atol=1e-15)


def test_covariance_from_runs_errors_and_floor():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((20, 3))
    x[:, 1] = 4.0
    with pytest.raises(DegenerateChannel) as info:
        spd.covariance_from_runs([x], labels=["a", "b", "c"])
    assert info.value.region == "b"
    with pytest.raises(EmptySample):
        spd.covariance_from_runs([])
    # K > T: the sample covariance is singular and gets floored
    res = spd.covariance_from_runs([rng.standard_normal((3, 5))])
    assert res.floored and np.linalg.eigvalsh(res.matrix).min() > 1e-10
    with pytest.raises(DimensionMismatch):
        spd.covariance_from_runs([rng.standard_normal((5, 3)), rng.standard_normal((5, 4))])


def test_parcel_average():
    x = np.arange(12, dtype=float).reshape(3, 4)
    out, labels = spd.parcel_average(x, ["b", "a", "b", "a"])
    assert list(labels) == ["a", "b"]
    np.testing.assert_allclose(out, np.column_stack([(x[:, 1] + x[:, 3]) / 2, (x[:, 0] + x[:, 2]) / 2]))


def test_io(tmp_path):
    rng = np.random.default_rng(14)
    c = random_spd(rng, 3)
    spd.write_matrix_csv(c, tmp_path / "c.csv")
    assert np.array_equal(spd.read_matrix_csv(tmp_path / "c.csv"), c)
    runs = [rng.standard_normal((10, 3)) for _ in range(2)]
    for i, r in enumerate(runs):
        spd.write_matrix_csv(r, tmp_path / f"r{i}.csv")
    (tmp_path / "m.json").write_text(json.dumps({"runs": ["r0.csv", "r1.csv"], "labels": ["x", "y", "z"]}))
    got, labels = spd.read_timeseries_manifest(tmp_path / "m.json")
    assert labels == ["x", "y", "z"]
    assert all(np.array_equal(a, b) for a, b in zip(got, runs))
