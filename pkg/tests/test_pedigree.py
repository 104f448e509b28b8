import numpy as np
import pytest

from oracles import path_counting_kinship, random_pedigree
from shapeconn.errors import (
    CycleDetected,
    DuplicateId,
    InvalidProportions,
    MissingParent,
    MzGroupParentMismatch,
    ValidationError,
)
from shapeconn.pedigree import (
    Individual,
    KinshipMatrix,
    Pedigree,
    kinship,
    parse_pedigree,
    read_kinship,
    synthetic_cohort,
    write_kinship,
    write_pedigree,
)


def write_csv(tmp_path, rows, name="ped.csv"):
    path = tmp_path / name
    path.write_text("id,father,mother,mz_group\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


def k_entry(ped, a, b):
    km = kinship(ped)
    return km.k[ped.index[a], ped.index[b]]


def test_parse_three_rows(tmp_path):
    ped = parse_pedigree(write_csv(tmp_path, ["f,,,", "m,,,", "c,f,m,"]))
    assert len(ped) == 3
    assert ped.founders == ["f", "m"]
    assert ped.index == {"f": 0, "m": 1, "c": 2}


def test_parse_self_parent(tmp_path):
    with pytest.raises(CycleDetected):
        parse_pedigree(write_csv(tmp_path, ["m,,,", "c,c,m,"]))


def test_parse_longer_cycle():
    with pytest.raises(CycleDetected):
        Pedigree((Individual("a", "b", None), Individual("b", "a", None)))


def test_parse_mz_different_mothers(tmp_path):
    rows = ["f,,,", "m1,,,", "m2,,,", "t1,f,m1,g", "t2,f,m2,g"]
    with pytest.raises(MzGroupParentMismatch):
        parse_pedigree(write_csv(tmp_path, rows))


def test_parse_missing_parent_and_duplicate(tmp_path):
    with pytest.raises(MissingParent):
        parse_pedigree(write_csv(tmp_path, ["c,f,m,"]))
    with pytest.raises(DuplicateId):
        parse_pedigree(write_csv(tmp_path, ["a,,,", "a,,,"]))


def test_parse_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="nope.csv"):
        parse_pedigree(tmp_path / "nope.csv")


def test_parent_child_half():
    ped = Pedigree((Individual("f"), Individual("m"), Individual("c", "f", "m")))
    # phi_cf = (phi_ff + phi_mf) / 2 = (1/2 + 0) / 2 = 1/4, so K = 1/2
    assert k_entry(ped, "c", "f") == pytest.approx(0.5, abs=1e-15)
    assert k_entry(ped, "f", "m") == 0.0
    assert k_entry(ped, "c", "c") == 1.0


def test_siblings_against_path_counting():
    full = Pedigree((Individual("f"), Individual("m"), Individual("a", "f", "m"), Individual("b", "f", "m")))
    half = Pedigree((Individual("f"), Individual("m1"), Individual("m2"),
                     Individual("a", "f", "m1"), Individual("b", "f", "m2")))
    for ped, expected in ((full, 0.5), (half, 0.25)):
        k = kinship(ped).k
        oracle = 2 * path_counting_kinship(ped)
        np.testing.assert_allclose(k, oracle, atol=1e-15)
        assert k_entry(ped, "a", "b") == pytest.approx(expected, abs=1e-15)


def test_mz_pair_maximal():
    ped = Pedigree((Individual("f"), Individual("m"),
                    Individual("t1", "f", "m", "g"), Individual("t2", "f", "m", "g")))
    assert k_entry(ped, "t1", "t2") == 1.0


def test_mz_twin_children_are_half_sibs_genetically():
    # children of MZ co-twins with unrelated partners relate like half sibs
    ped = Pedigree((
        Individual("f"), Individual("m"),
        Individual("t1", "f", "m", "g"), Individual("t2", "f", "m", "g"),
        Individual("p1"), Individual("p2"),
        Individual("c1", "t1", "p1"), Individual("c2", "t2", "p2"),
    ))
    assert k_entry(ped, "c1", "c2") == pytest.approx(0.25, abs=1e-15)
    assert k_entry(ped, "c1", "t2") == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(kinship(ped).k, 2 * path_counting_kinship(ped), atol=1e-15)


def test_twin_listed_after_its_childs_parent_order():
    # descendants of one twin may appear before the other twin in the file
    ped = Pedigree((
        Individual("f"), Individual("m"), Individual("t1", "f", "m", "g"), Individual("p"),
        Individual("c", "t1", "p"), Individual("t2", "f", "m", "g"),
    ))
    assert k_entry(ped, "c", "t2") == pytest.approx(0.5, abs=1e-15)


def test_inbreeding_raises_diagonal():
    ped = Pedigree((Individual("f"), Individual("m"), Individual("a", "f", "m"), Individual("b", "f", "m"),
                    Individual("x", "a", "b")))
    assert k_entry(ped, "x", "x") == pytest.approx(1.25, abs=1e-15)


@pytest.mark.parametrize("seed", range(40))
def test_random_pedigrees_match_path_counting(seed):
    rng = np.random.default_rng(seed)
    ped = random_pedigree(rng, int(rng.integers(3, 9)))
    np.testing.assert_allclose(kinship(ped).phi, path_counting_kinship(ped), atol=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(100 + seed)
    ped = random_pedigree(rng, 10)
    order = rng.permutation(10)
    k = kinship(ped).k
    kp = kinship(ped.permuted(order)).k
    np.testing.assert_allclose(kp, k[np.ix_(order, order)], atol=1e-15)


def test_k_invariants_on_cohorts():
    for seed in range(20):
        ped = synthetic_cohort(15, (0.25, 0.25, 0.25, 0.25), seed)
        k = kinship(ped).k
        assert np.allclose(k, k.T)
        assert np.all(np.diag(k) == 1.0)
        assert k.min() >= 0.0 and k.max() <= 1.0
        assert np.linalg.eigvalsh(k).min() >= -1e-10
        for members in ped.mz_groups().values():
            i, j = (ped.index[m] for m in members)
            assert k[i, j] == k[i, i]


def test_synthetic_cohort_examples():
    ped = synthetic_cohort(1, {"mz": 1.0}, 7)
    assert len(ped) == 4 and len(ped.founders) == 2
    assert list(ped.mz_groups().values()) == [ped.non_founders]
    assert len(synthetic_cohort(0, (0.25, 0.25, 0.25, 0.25), 3)) == 0
    a = kinship(synthetic_cohort(100, (0.25, 0.25, 0.25, 0.25), 1)).k
    b = kinship(synthetic_cohort(100, (0.25, 0.25, 0.25, 0.25), 1)).k
    assert np.array_equal(a, b)


def test_synthetic_cohort_mix_and_errors():
    ped = synthetic_cohort(8, {"mz": 0.5, "singleton": 0.5}, 0)
    assert len(ped.mz_groups()) == 4
    assert len(ped.non_founders) == 4 * 2 + 4
    with pytest.raises(InvalidProportions):
        synthetic_cohort(5, (0.5, 0.5, 0.5, 0.0), 0)
    with pytest.raises(InvalidProportions):
        synthetic_cohort(5, {"cousins": 1.0}, 0)


def test_csv_round_trips(tmp_path):
    ped = synthetic_cohort(6, (0.25, 0.25, 0.25, 0.25), 2)
    write_pedigree(ped, tmp_path / "p.csv")
    again = parse_pedigree(tmp_path / "p.csv")
    assert again == ped
    km = kinship(again)
    write_kinship(km, tmp_path / "k.csv")
    back = read_kinship(tmp_path / "k.csv")
    assert back.ids == km.ids
    assert np.array_equal(back.k, km.k)


def test_subset_and_from_k():
    ped = synthetic_cohort(3, {"dz": 1.0}, 0)
    km = kinship(ped)
    sub = km.subset(ped.non_founders)
    assert sub.n == 6
    np.testing.assert_array_equal(KinshipMatrix.from_k(sub.k, sub.ids).phi, sub.phi)
    with pytest.raises(ValidationError):
        km.subset(["nobody"])
