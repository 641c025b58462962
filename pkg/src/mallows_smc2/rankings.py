"""Permutation primitives and right-invariant distances between rankings.

A ranking is a 1-d integer array `r` of length m whose entry ``r[i]`` is
the rank (1 = most preferred) that item ``i`` receives; the entries are
exactly a permutation of 1..m. The reference ranking is the identity
``(1, 2, ..., m)``.
"""

import enum
import itertools
import math

import numpy as np

from . import kernels

DEFAULT_ENUMERATION_CAP = 9


class Distance(enum.IntEnum):
    """The six distance functions supported by the Mallows kernel."""

    FOOTRULE = 0
    SPEARMAN = 1
    KENDALL = 2
    CAYLEY = 3
    HAMMING = 4
    ULAM = 5

    @classmethod
    def from_name(cls, name):
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown distance kind {name!r}") from None

    @classmethod
    def coerce(cls, value):
        """Accept an enum member, its integer code, or its name."""
        if isinstance(value, str):
            return cls.from_name(value)
        return cls(value)

    @property
    def label(self):
        return self.name.lower()


def as_ranking(r):
    """Coerce to an int64 array and validate the permutation invariant."""
    r = np.asarray(r, dtype=np.int64)
    if r.ndim != 1 or r.size < 1:
        raise ValueError("a ranking must be a non-empty 1-d sequence")
    if not np.array_equal(np.sort(r), np.arange(1, r.size + 1)):
        raise ValueError(f"not a permutation of 1..{r.size}: {r.tolist()}")
    return r


def is_ranking(r):
    r = np.asarray(r)
    return r.ndim == 1 and r.size >= 1 and np.array_equal(np.sort(r), np.arange(1, r.size + 1))


def identity_ranking(m):
    return np.arange(1, m + 1, dtype=np.int64)


def ranking_to_ordering(r):
    """Items (0-based) listed from most to least preferred."""
    return np.argsort(r, kind="stable").astype(np.int64)


def ordering_to_ranking(ordering):
    """Inverse of :func:`ranking_to_ordering`."""
    ordering = np.asarray(ordering, dtype=np.int64)
    r = np.empty(ordering.size, dtype=np.int64)
    r[ordering] = np.arange(1, ordering.size + 1)
    return r


def relabel(r, sigma):
    """Relabel items: entry i of the result is the rank of item sigma[i].

    This is the right action used in the right-invariance property
    d(a, b) = d(relabel(a, s), relabel(b, s)).
    """
    return np.asarray(r, dtype=np.int64)[np.asarray(sigma, dtype=np.int64)]


def distance(a, b, kind):
    """Distance between two rankings of the same length.

    Parameters
    ----------
    a, b : array_like
        Rankings (permutations of 1..m).
    kind : Distance
        Which of the six distances to evaluate.

    Returns
    -------
    int
        The distance; integer-valued for every kind.
    """
    a = as_ranking(a)
    b = as_ranking(b)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return int(kernels.dist_to_ref(a[None, :], b, int(kind))[0])


def distances_to(X, ref, kind):
    """Distances from each row of `X` to `ref`, as float64."""
    return kernels.dist_to_ref(X, ref, int(kind))


def enumerate_permutations(m, cap=DEFAULT_ENUMERATION_CAP):
    """Yield all m! rankings in lexicographic order of their entries.

    A guard keeps accidental factorial blow-ups out of production paths;
    raise the cap explicitly for larger oracle runs.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > cap:
        raise ValueError(f"m={m} exceeds the enumeration cap {cap}")
    for p in itertools.permutations(range(1, m + 1)):
        yield np.array(p, dtype=np.int64)


def permutation_matrix(m, cap=DEFAULT_ENUMERATION_CAP):
    """All m! rankings stacked into an (m!, m) array, lexicographic order."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > cap:
        raise ValueError(f"m={m} exceeds the enumeration cap {cap}")
    out = np.fromiter(
        itertools.chain.from_iterable(itertools.permutations(range(1, m + 1))),
        dtype=np.int64,
        count=math.factorial(m) * m,
    )
    return out.reshape(math.factorial(m), m)


def max_distance(m, kind):
    """Maximum of the distance over all pairs of rankings of length m."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        return 0
    kind = Distance(kind)
    if kind == Distance.FOOTRULE:
        return m * m // 2
    if kind == Distance.SPEARMAN:
        return m * (m * m - 1) // 3
    if kind == Distance.KENDALL:
        return m * (m - 1) // 2
    if kind == Distance.CAYLEY:
        return m - 1
    if kind == Distance.HAMMING:
        return m
    return m - 1  # ulam
