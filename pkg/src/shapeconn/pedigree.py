"""Pedigrees, kinship coefficients and the relatedness matrix ``K = 2 * Phi``."""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DuplicateId,
    InvalidProportions,
    MissingParent,
    MzGroupParentMismatch,
    ValidationError,
)

PEDIGREE_HEADER = ("id", "father", "mother", "mz_group")
FAMILY_TYPES = ("mz", "dz", "sib", "singleton")


@dataclass(frozen=True)
class Individual:
    id: str
    father: str | None = None
    mother: str | None = None
    mz_group: str | None = None

    @property
    def is_founder(self) -> bool:
        return self.father is None and self.mother is None


@dataclass(frozen=True)
class Pedigree:
    """Validated family structure.

    Individuals keep their input order; ``index`` maps id to row/column of the
    kinship matrix.
    """

    individuals: tuple[Individual, ...]
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, ind in enumerate(self.individuals):
            if ind.id in index:
                raise DuplicateId(f"duplicate individual id {ind.id!r}")
            index[ind.id] = i
        object.__setattr__(self, "index", index)
        _validate(self)

    def __len__(self) -> int:
        return len(self.individuals)

    @property
    def ids(self) -> list[str]:
        return [ind.id for ind in self.individuals]

    @property
    def founders(self) -> list[str]:
        return [ind.id for ind in self.individuals if ind.is_founder]

    @property
    def non_founders(self) -> list[str]:
        return [ind.id for ind in self.individuals if not ind.is_founder]

    def mz_groups(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for ind in self.individuals:
            if ind.mz_group is not None:
                groups.setdefault(ind.mz_group, []).append(ind.id)
        return groups

    def permuted(self, order: Sequence[int]) -> "Pedigree":
        return Pedigree(tuple(self.individuals[i] for i in order))


@dataclass(frozen=True)
class KinshipMatrix:
    ids: tuple[str, ...]
    phi: np.ndarray

    @property
    def k(self) -> np.ndarray:
        return 2.0 * self.phi

    @property
    def n(self) -> int:
        return len(self.ids)

    def subset(self, ids: Sequence[str]) -> "KinshipMatrix":
        """Restrict to ``ids`` (in the given order)."""
        pos = {x: i for i, x in enumerate(self.ids)}
        try:
            idx = [pos[x] for x in ids]
        except KeyError as e:
            raise ValidationError(f"id {e.args[0]!r} not in kinship matrix") from None
        return KinshipMatrix(tuple(ids), self.phi[np.ix_(idx, idx)])

    @classmethod
    def from_k(cls, k, ids=None) -> "KinshipMatrix":
        k = np.asarray(k, dtype=float)
        if ids is None:
            ids = tuple(str(i) for i in range(k.shape[0]))
        return cls(tuple(ids), 0.5 * k)


def _validate(ped: Pedigree) -> None:
    index = ped.index
    for ind in ped.individuals:
        for parent in (ind.father, ind.mother):
            if parent is None:
                continue
            if parent == ind.id:
                raise CycleDetected(f"{ind.id!r} is listed as its own parent")
            if parent not in index:
                raise MissingParent(f"parent {parent!r} of {ind.id!r} is not in the pedigree")
    for group, members in ped.mz_groups().items():
        parents = {(ped.individuals[index[m]].father, ped.individuals[index[m]].mother) for m in members}
        if len(parents) > 1:
            raise MzGroupParentMismatch(f"members of MZ group {group!r} do not share both parents")
    _processing_order(ped)  # raises on cycles


def _processing_order(ped: Pedigree) -> list[list[int]]:
    """Topological order of processing units (an MZ group or a single person).

    MZ co-twins form one unit so that no descendant of one twin is processed
    before the other twin. Ties are broken by input order.
    """
    index = ped.index
    unit_of = {}
    units: list[list[int]] = []
    seen_groups: dict[str, int] = {}
    for i, ind in enumerate(ped.individuals):
        if ind.mz_group is not None and ind.mz_group in seen_groups:
            u = seen_groups[ind.mz_group]
            units[u].append(i)
        else:
            u = len(units)
            units.append([i])
            if ind.mz_group is not None:
                seen_groups[ind.mz_group] = u
        unit_of[i] = u

    n_units = len(units)
    indegree = [0] * n_units
    children: list[set[int]] = [set() for _ in range(n_units)]
    for u, members in enumerate(units):
        ind = ped.individuals[members[0]]
        for parent in {ind.father, ind.mother} - {None}:
            pu = unit_of[index[parent]]
            if pu == u:
                raise CycleDetected(f"{ind.id!r} descends from its own MZ group")
            if u not in children[pu]:
                children[pu].add(u)
                indegree[u] += 1

    heap = [u for u in range(n_units) if indegree[u] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(units[u])
        for c in sorted(children[u]):
            indegree[c] -= 1
            if indegree[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != n_units:
        stuck = [ped.individuals[units[u][0]].id for u in range(n_units) if indegree[u] > 0]
        raise CycleDetected(f"pedigree contains a cycle through {stuck}")
    return order


def parse_pedigree(path) -> Pedigree:
    """Read a pedigree CSV with header ``id,father,mother,mz_group``.

    Empty cells mark founders (no parent) and individuals outside any MZ group.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"pedigree file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(PEDIGREE_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        rows = [
            Individual(
                id=row["id"].strip(),
                father=row["father"].strip() or None,
                mother=row["mother"].strip() or None,
                mz_group=row["mz_group"].strip() or None,
            )
            for row in reader
        ]
    return Pedigree(tuple(rows))


def write_pedigree(ped: Pedigree, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PEDIGREE_HEADER)
        for ind in ped.individuals:
            w.writerow([ind.id, ind.father or "", ind.mother or "", ind.mz_group or ""])


def kinship(ped: Pedigree) -> KinshipMatrix:
    """Kinship coefficients by the founder-downward recursion.

    ``phi_ii = (1 + phi_{father,mother}) / 2`` and
    ``phi_ij = (phi_{father,j} + phi_{mother,j}) / 2`` for ``j`` processed
    before ``i``; unknown parents contribute zero. Co-twins in one MZ group
    get ``phi_ij = phi_ii``.
    """
    n = len(ped)
    phi = np.zeros((n, n))
    index = ped.index
    done: list[int] = []
    for unit in _processing_order(ped):
        first = ped.individuals[unit[0]]
        f = index[first.father] if first.father is not None else None
        m = index[first.mother] if first.mother is not None else None
        if done:
            prev = np.asarray(done)
            row = np.zeros(len(prev))
            if f is not None:
                row += phi[f, prev]
            if m is not None:
                row += phi[m, prev]
            row *= 0.5
        self_phi = 0.5 * (1.0 + (phi[f, m] if f is not None and m is not None else 0.0))
        for i in unit:
            if done:
                phi[i, prev] = row
                phi[prev, i] = row
        for i in unit:
            for j in unit:
                phi[i, j] = self_phi
        done.extend(unit)
    phi = 0.5 * (phi + phi.T)
    return KinshipMatrix(tuple(ped.ids), phi)


def write_kinship(km: KinshipMatrix, path) -> None:
    """Dense CSV of ``K`` with the ids as header row and first column."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *km.ids])
        for i, row in zip(km.ids, km.k):
            w.writerow([i, *(repr(float(v)) for v in row)])


def read_kinship(path) -> KinshipMatrix:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"kinship file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0][1:]
    ids = [r[0] for r in rows[1:]]
    if header != ids:
        raise ValidationError(f"{path}: row ids do not match header ids")
    k = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return KinshipMatrix.from_k(k, ids)


def _allocate(n: int, proportions: Sequence[float]) -> list[int]:
    # largest-remainder apportionment
    raw = np.asarray(proportions) * n
    counts = np.floor(raw).astype(int)
    remainder = raw - counts
    for i in np.argsort(-remainder, kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def synthetic_cohort(
    n_families: int,
    family_mix: Mapping[str, float] | Sequence[float] = (0.25, 0.25, 0.25, 0.25),
    seed: int = 0,
) -> Pedigree:
    """Deterministic desk-scale cohort of nuclear families.

    Every family has two synthetic founders (``*_f``, ``*_m``) and one or two
    children. ``family_mix`` gives the proportions of MZ pairs, DZ pairs,
    ordinary sibling pairs and singletons, either as a mapping keyed by
    ``mz``, ``dz``, ``sib``, ``singleton`` or as a 4-sequence in that order.
    Family counts are apportioned exactly; the family order is shuffled by
    ``seed``.
    """
    if isinstance(family_mix, Mapping):
        unknown = set(family_mix) - set(FAMILY_TYPES)
        if unknown:
            raise InvalidProportions(f"unknown family types {sorted(unknown)}")
        props = [float(family_mix.get(t, 0.0)) for t in FAMILY_TYPES]
    else:
        props = [float(x) for x in family_mix]
        if len(props) != len(FAMILY_TYPES):
            raise InvalidProportions(f"expected {len(FAMILY_TYPES)} proportions, got {len(props)}")
    if any(p < 0 for p in props) or abs(sum(props) - 1.0) > 1e-9:
        raise InvalidProportions(f"family proportions must be nonnegative and sum to 1, got {props}")
    if n_families < 0:
        raise ValidationError("n_families must be nonnegative")

    counts = _allocate(n_families, props)
    kinds = [t for t, c in zip(FAMILY_TYPES, counts) for _ in range(c)]
    rng = np.random.default_rng(seed)
    kinds = [kinds[i] for i in rng.permutation(len(kinds))]

    people: list[Individual] = []
    for fam, kind in enumerate(kinds):
        tag = f"F{fam:04d}"
        father, mother = f"{tag}_f", f"{tag}_m"
        people.append(Individual(father))
        people.append(Individual(mother))
        n_children = 1 if kind == "singleton" else 2
        group = f"{tag}_mz" if kind == "mz" else None
        for c in range(n_children):
            people.append(Individual(f"{tag}_c{c + 1}", father, mother, group))
    return Pedigree(tuple(people))
