"""
Relatedness from a pedigree
===========================

Builds a small family by hand, computes K = 2 Phi and shows the entries the
variance-component model relies on: parent and child share half their
genome, full siblings half on average, half siblings a quarter and MZ twins
all of it.
"""

import numpy as np

from shapeconn.pedigree import Individual, Pedigree, kinship, synthetic_cohort

people = (
    Individual("dad"), Individual("mum"), Individual("mum2"),
    Individual("twin1", "dad", "mum", mz_group="tw"),
    Individual("twin2", "dad", "mum", mz_group="tw"),
    Individual("sib", "dad", "mum"),
    Individual("half", "dad", "mum2"),
)
km = kinship(Pedigree(people))
np.set_printoptions(precision=3, suppress=True)
print("ids:", km.ids)
print(km.k)


def entry(a, b):
    return km.k[km.ids.index(a), km.ids.index(b)]


for a, b in (("dad", "sib"), ("sib", "twin1"), ("sib", "half"), ("twin1", "twin2")):
    print(f"K[{a}, {b}] = {entry(a, b):.2f}")

# a synthetic twin cohort as used by the simulation study
ped = synthetic_cohort(5, {"mz": 0.4, "dz": 0.6}, seed=1)
sub = kinship(ped).subset(ped.non_founders)
print(f"{sub.n} twins, smallest eigenvalue of K {np.linalg.eigvalsh(sub.k)[0]:.2e}")
