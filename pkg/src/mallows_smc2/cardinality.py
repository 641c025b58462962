"""Distance-cardinality tables and Mallows partition functions.

The partition function Z(alpha) = sum_r exp(-alpha d(r, e)) is evaluated
either from a closed-form expression (Kendall, Cayley, Hamming) or from
a table of cardinalities |L_i| = #{r : d(r, e) = d_i}, so that
Z(alpha) = sum_i |L_i| exp(-alpha d_i). Everything is carried in log
scale. Counts are exact Python integers since m! overflows 64 bits at
m = 21.
"""

import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.special import gammaln

from .rankings import Distance, distances_to, permutation_matrix

TABLE_DIR_ENV = "MALLOWS_SMC2_TABLE_DIR"
TABLE_BACKED = (Distance.FOOTRULE, Distance.SPEARMAN, Distance.ULAM)


@dataclass(frozen=True)
class CardinalityTable:
    """Counts of permutations at each attained distance from the identity."""

    m: int
    kind: Distance
    distances: np.ndarray          # strictly increasing ints, starts at 0
    counts: tuple = ()             # exact Python ints, same length
    log_counts: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        distances = np.asarray(self.distances, dtype=np.int64)
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != distances.size or distances.size == 0:
            raise ValueError("distances and counts must be equal-length and non-empty")
        if distances[0] != 0 or counts[0] != 1:
            raise ValueError("table must start with distance 0 and count 1")
        if np.any(np.diff(distances) <= 0):
            raise ValueError("distance values must be strictly increasing")
        if any(c <= 0 for c in counts):
            raise ValueError("counts must be positive")
        total = sum(counts)
        if total != math.factorial(self.m):
            raise ValueError(
                f"counts sum to {total}, expected {self.m}! = {math.factorial(self.m)}"
            )
        object.__setattr__(self, "distances", distances)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(
            self, "log_counts", np.array([math.log(c) for c in counts], dtype=np.float64)
        )


def build_cardinality_table(m, kind, cap=9):
    """Brute-force table over all m! permutations; the small-m oracle."""
    kind = Distance(kind)
    perms = permutation_matrix(m, cap=cap)
    d = distances_to(perms, np.arange(1, m + 1, dtype=np.int64), kind).astype(np.int64)
    values, counts = np.unique(d, return_counts=True)
    return CardinalityTable(m, kind, values, tuple(int(c) for c in counts))


# ---------------------------------------------------------------------------
# Exact cardinality counts without enumeration. Used to generate the shipped
# tables; each routine is validated against build_cardinality_table in tests.
# ---------------------------------------------------------------------------


def footrule_cardinalities(m):
    """Distribution of sum |r_i - i| via a sweep over coordinate cuts.

    State: number of "open" position/value pairs straddling the current
    cut; each cut with o open pairs contributes 2*o to the distance.
    """
    states = {0: {0: 1}}  # open count -> {distance: count}
    for j in range(1, m + 1):
        new = {}
        last = j == m
        for o, dists in states.items():
            # (new open count, multiplicity) for the arriving position+value
            moves = [(o, 1), (o + 1, 1), (o, o), (o, o), (o - 1, o * o)]
            for o2, ways in moves:
                if ways == 0 or o2 < 0:
                    continue
                if last and o2 != 0:
                    continue
                add = 0 if last else 2 * o2
                tgt = new.setdefault(o2, {})
                for d, c in dists.items():
                    tgt[d + add] = tgt.get(d + add, 0) + c * ways
        states = new
    return dict(sorted(states[0].items()))


def spearman_cardinalities(m):
    """Distribution of sum (r_i - i)^2 via an assignment-mask sweep."""
    if m > 14:
        raise ValueError("spearman cardinality sweep limited to m <= 14")
    dmax = m * (m * m - 1) // 3
    f = np.zeros((1 << m, dmax + 1), dtype=np.int64)
    f[0, 0] = 1
    for mask in range(1 << m):
        row = f[mask]
        if not row.any():
            continue
        pos = bin(mask).count("1")
        for j in range(m):
            if mask & (1 << j):
                continue
            delta = (j - pos) * (j - pos)
            f[mask | (1 << j), delta:] += row[: dmax + 1 - delta]
    full = f[(1 << m) - 1]
    return {int(d): int(c) for d, c in enumerate(full) if c > 0}


def _partitions(n, maxpart=None):
    if maxpart is None:
        maxpart = n
    if n == 0:
        yield ()
        return
    for first in range(min(n, maxpart), 0, -1):
        for rest in _partitions(n - first, first):
            yield (first,) + rest


def _hook_count(shape, m):
    # standard Young tableaux of the given shape, by the hook length formula
    prod = 1
    cols = np.zeros(shape[0], dtype=np.int64)
    col_heights = [0] * (shape[0] if shape else 0)
    for row in shape:
        for j in range(row):
            col_heights[j] += 1
    for i, row in enumerate(shape):
        for j in range(row):
            hook = (row - j) + (col_heights[j] - i) - 1
            prod *= hook
    del cols
    return math.factorial(m) // prod


def ulam_cardinalities(m):
    """Distribution of m - LIS via RSK: permutations with LIS = l are
    counted by sum of squared tableau counts over shapes with first row l."""
    out = {}
    for shape in _partitions(m):
        f = _hook_count(shape, m)
        d = m - shape[0]
        out[d] = out.get(d, 0) + f * f
    return dict(sorted(out.items()))


def kendall_cardinalities(m):
    """Mahonian numbers: inversion-count distribution."""
    counts = [1]
    for n in range(2, m + 1):
        acc = [0] * (len(counts) + n - 1)
        running = 0
        # convolution with the uniform block 0..n-1, done with a prefix trick
        for d in range(len(acc)):
            running += counts[d] if d < len(counts) else 0
            if d - n >= 0:
                running -= counts[d - n] if d - n < len(counts) else 0
            acc[d] = running
        counts = acc
    return {d: c for d, c in enumerate(counts) if c > 0}


def cayley_cardinalities(m):
    """Unsigned Stirling numbers of the first kind, indexed by m - cycles."""
    # c[k] = number of permutations of n with k cycles
    c = [0, 1]  # n = 1
    for n in range(1, m):
        nxt = [0] * (len(c) + 1)
        for k in range(1, len(c)):
            nxt[k] += n * c[k]
            nxt[k + 1] += c[k]
        c = nxt
    return {m - k: c[k] for k in range(len(c) - 1, 0, -1) if c[k] > 0}


def hamming_cardinalities(m):
    """C(m, k) * derangements(k) permutations move exactly k items."""
    der = [1, 0]
    for k in range(2, m + 1):
        der.append((k - 1) * (der[k - 1] + der[k - 2]))
    out = {}
    for k in range(m + 1):
        cnt = math.comb(m, k) * der[k]
        if cnt > 0:
            out[k] = cnt
    return out


_EXACT_COUNTERS = {
    Distance.FOOTRULE: footrule_cardinalities,
    Distance.SPEARMAN: spearman_cardinalities,
    Distance.ULAM: ulam_cardinalities,
    Distance.KENDALL: kendall_cardinalities,
    Distance.CAYLEY: cayley_cardinalities,
    Distance.HAMMING: hamming_cardinalities,
}


def exact_cardinality_table(m, kind):
    """Cardinality table from the exact counting recurrences (no enumeration)."""
    kind = Distance(kind)
    counts = _EXACT_COUNTERS[kind](m)
    items = sorted(counts.items())
    return CardinalityTable(
        m, kind, np.array([d for d, _ in items]), tuple(c for _, c in items)
    )


# ---------------------------------------------------------------------------
# Table files
# ---------------------------------------------------------------------------


def load_cardinality_table(path):
    """Parse a plain-text cardinality table.

    Line 1 is ``m=<int> kind=<name>``; each further line is
    ``<distance> <count>`` with strictly increasing distances. ``#``
    starts a comment.
    """
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if header is None:
                fields = dict(
                    part.split("=", 1) for part in line.split() if "=" in part
                )
                if "m" not in fields or "kind" not in fields:
                    raise ValueError(f"{path}:{lineno}: expected header 'm=<int> kind=<name>'")
                header = (int(fields["m"]), Distance.from_name(fields["kind"]))
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected '<distance> <count>'")
            rows.append((int(parts[0]), int(parts[1])))
    if header is None:
        raise ValueError(f"{path}: empty table file")
    if not rows:
        raise ValueError(f"{path}: header but no rows")
    m, kind = header
    return CardinalityTable(
        m, kind, np.array([d for d, _ in rows]), tuple(c for _, c in rows)
    )


def write_cardinality_table(table, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"m={table.m} kind={table.kind.label}\n")
        for d, c in zip(table.distances.tolist(), table.counts):
            fh.write(f"{d} {c}\n")


def _table_filename(m, kind):
    return f"{Distance(kind).label}_{m}.txt"


def find_table(m, kind):
    """Locate a table for (m, kind): the directory named by
    MALLOWS_SMC2_TABLE_DIR is searched first, then the packaged tables."""
    name = _table_filename(m, kind)
    user_dir = os.environ.get(TABLE_DIR_ENV)
    if user_dir:
        candidate = os.path.join(user_dir, name)
        if os.path.exists(candidate):
            return load_cardinality_table(candidate)
    packaged = resources.files("mallows_smc2") / "tables" / name
    if packaged.is_file():
        with resources.as_file(packaged) as p:
            return load_cardinality_table(p)
    raise FileNotFoundError(
        f"no cardinality table for kind={Distance(kind).label} m={m}; "
        f"set {TABLE_DIR_ENV} to a directory containing {name}"
    )


# ---------------------------------------------------------------------------
# Partition function
# ---------------------------------------------------------------------------


class PartitionFunction:
    """log Z(alpha) for a fixed item count and distance kind.

    Backends: ``closed_form`` (Kendall, Cayley, Hamming only) or
    ``table``. The closed forms are classical exponential-family results
    for these metrics; they are cross-checked against brute-force
    summation for all m <= 8 in the test suite before anything trusts
    them.
    """

    def __init__(self, m, kind, backend="auto", table=None):
        self.m = int(m)
        self.kind = Distance(kind)
        if backend == "auto":
            backend = "table" if self.kind in TABLE_BACKED else "closed_form"
        if backend == "closed_form" and self.kind in TABLE_BACKED:
            raise ValueError(f"no closed form for {self.kind.label}; use a table")
        if backend not in ("closed_form", "table"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        if backend == "table":
            if table is None:
                table = find_table(self.m, self.kind)
            if table.m != self.m or table.kind != self.kind:
                raise ValueError("table does not match partition function (m, kind)")
        self.table = table

    @classmethod
    def from_table(cls, table):
        return cls(table.m, table.kind, backend="table", table=table)

    def log_z(self, alpha):
        """log Z(alpha); alpha must be >= 0."""
        return float(self.log_z_many(np.array([alpha], dtype=np.float64))[0])

    def log_z_many(self, alphas):
        """Vectorized log Z over an array of dispersions."""
        alphas = np.asarray(alphas, dtype=np.float64)
        if np.any(alphas < 0):
            raise ValueError("alpha must be non-negative")
        if self.backend == "table":
            t = self.table.log_counts[None, :] - np.outer(alphas, self.table.distances)
            hi = t.max(axis=1, keepdims=True)
            return (hi + np.log(np.exp(t - hi).sum(axis=1, keepdims=True))).ravel()
        if self.kind == Distance.KENDALL:
            j = np.arange(1, self.m + 1, dtype=np.float64)
            with np.errstate(divide="ignore", invalid="ignore"):
                num = np.log(-np.expm1(-np.outer(alphas, j))).sum(axis=1)
                den = self.m * np.log(-np.expm1(-alphas))
                out = num - den
            out[alphas == 0] = gammaln(self.m + 1)
            return out
        if self.kind == Distance.CAYLEY:
            j = np.arange(1, self.m, dtype=np.float64)
            return np.log1p(np.outer(np.exp(-alphas), j)).sum(axis=1)
        # hamming: sum_k C(m,k) D_k exp(-alpha k) over attained k
        card = hamming_cardinalities(self.m)
        ks = np.array(sorted(card), dtype=np.float64)
        logc = np.array([math.log(card[int(k)]) for k in ks])
        t = logc[None, :] - np.outer(alphas, ks)
        hi = t.max(axis=1, keepdims=True)
        return (hi + np.log(np.exp(t - hi).sum(axis=1, keepdims=True))).ravel()


def partition_function(m, kind, backend="auto"):
    """Convenience constructor used throughout the engine."""
    return PartitionFunction(m, kind, backend=backend)
