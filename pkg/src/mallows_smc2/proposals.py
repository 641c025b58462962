"""Proposal distributions for latent rankings and modal rankings.

Every latent-ranking proposal draws from the constraint set S_n of
rankings compatible with a user's data and reports the log proposal
probability log q(r | S_n) that enters the particle weights. The
leap-and-shift proposal perturbs a modal ranking by an Ulam distance of
one and is symmetric.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import kernels
from .rankings import as_ranking

DEFAULT_ORDERINGS_CAP = 10**6


class OrderingCapError(RuntimeError):
    """Raised when a user's linear extensions exceed the in-memory cap."""

    def __init__(self, user, cap):
        self.user = user
        self.cap = cap
        super().__init__(
            f"user {user}: more than {cap} topological orderings; reduce the "
            "preference density or raise the orderings cap"
        )


def transitive_closure(pairs, m):
    """Warshall closure of the preference relation.

    Returns (closure, cyclic) where closure is an (m, m) boolean matrix
    with closure[s, t] meaning item s must precede item t. A cycle is a
    reported outcome, not an error: cyclic data are usable only with the
    Bernoulli error model.
    """
    closure = np.zeros((m, m), dtype=bool)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if np.any(pairs < 0) or np.any(pairs >= m):
        raise IndexError("pair item index out of range")
    closure[pairs[:, 0], pairs[:, 1]] = True
    for k in range(m):
        closure |= np.outer(closure[:, k], closure[k, :])
    cyclic = bool(np.any(closure & closure.T))
    return closure, cyclic


@dataclass
class OrderingSet:
    """All topological orderings of the compared items of one user."""

    items: np.ndarray        # ascending 0-based item indices, shape (k,)
    orderings: np.ndarray    # (n_orderings, k), rows are item indices
    relation: str            # all_compared | before_rest | unrelated

    def __post_init__(self):
        if self.orderings.shape[0] < 1:
            raise ValueError("an OrderingSet must contain at least one ordering")

    @property
    def n_orderings(self):
        return self.orderings.shape[0]


def enumerate_topological_orderings(closure, items, cap=DEFAULT_ORDERINGS_CAP, user=-1):
    """Linear extensions of the closure restricted to `items`.

    Depth-first search over the available (all-predecessors-placed)
    items, visiting children in ascending item index, so the enumeration
    order is deterministic.
    """
    items = np.asarray(sorted(items), dtype=np.int64)
    k = items.size
    if k == 0:
        return np.empty((1, 0), dtype=np.int64)
    if k > 62:
        raise ValueError("ordering enumeration supports at most 62 compared items")
    preds = np.zeros(k, dtype=np.int64)
    sub = closure[np.ix_(items, items)]
    for v in range(k):
        mask = 0
        for u in range(k):
            if sub[u, v]:
                mask |= 1 << u
        preds[v] = mask
    local, count = kernels.enumerate_orderings(preds, int(cap))
    if count < 0:
        raise OrderingCapError(user, cap)
    return items[local]


def build_ordering_set(pairs, m, relation="unrelated", cap=DEFAULT_ORDERINGS_CAP, user=-1):
    closure, cyclic = transitive_closure(pairs, m)
    if cyclic:
        raise ValueError(f"user {user}: cyclic preferences need the error model")
    items = np.unique(np.asarray(pairs, dtype=np.int64).reshape(-1))
    orderings = enumerate_topological_orderings(closure, items, cap=cap, user=user)
    if items.size == m:
        relation = "all_compared"
    elif relation == "all_compared":
        raise ValueError(f"user {user}: relation all_compared but {m - items.size} items uncompared")
    return OrderingSet(items=items, orderings=orderings, relation=relation)


@dataclass
class ConstraintSet:
    """The set S_n of latent rankings consistent with one observation."""

    mode: str                    # complete | partial | consistent_pairs | free_pairs
    m: int
    ranking: np.ndarray = None   # complete
    fixed: np.ndarray = None     # partial: observed rank or 0 per item
    closure: np.ndarray = None   # consistent_pairs
    ordering_set: OrderingSet = None
    free_items: np.ndarray = None
    free_ranks: np.ndarray = None

    def __post_init__(self):
        if self.mode == "partial" and self.free_items is None:
            self.free_items = np.nonzero(self.fixed == 0)[0]
            self.free_ranks = np.setdiff1d(
                np.arange(1, self.m + 1, dtype=np.int64), self.fixed[self.fixed > 0]
            )

    def contains(self, r):
        r = np.asarray(r, dtype=np.int64)
        if self.mode == "complete":
            return bool(np.array_equal(r, self.ranking))
        if self.mode == "partial":
            obs = self.fixed > 0
            return bool(np.array_equal(r[obs], self.fixed[obs]))
        if self.mode == "consistent_pairs":
            s, t = np.nonzero(self.closure)
            ok = bool(np.all(r[s] < r[t]))
            if ok and self.ordering_set is not None and self.ordering_set.relation == "before_rest":
                rest = np.setdiff1d(np.arange(self.m), self.ordering_set.items)
                if rest.size:
                    ok = bool(r[self.ordering_set.items].max() < r[rest].min())
            return ok
        return True


def constraint_set(obs, m, pairs_relation="unrelated", cap=DEFAULT_ORDERINGS_CAP):
    """Build the constraint set for one observation.

    `pairs_relation` declares how compared items relate to uncompared
    ones for Algorithm-style preference proposals; it is configuration,
    never inferred from the data.
    """
    if obs.kind == "complete":
        return ConstraintSet(mode="complete", m=m, ranking=obs.ranking)
    if obs.kind == "partial":
        return ConstraintSet(mode="partial", m=m, fixed=obs.fixed)
    if obs.noisy:
        return ConstraintSet(mode="free_pairs", m=m)
    closure, cyclic = transitive_closure(obs.pairs, m)
    if cyclic:
        raise ValueError(f"user {obs.user}: cyclic preferences need the error model")
    items = np.unique(obs.pairs.reshape(-1))
    orderings = enumerate_topological_orderings(closure, items, cap=cap, user=obs.user)
    relation = "all_compared" if items.size == m else pairs_relation
    oset = OrderingSet(items=items, orderings=orderings, relation=relation)
    return ConstraintSet(mode="consistent_pairs", m=m, closure=closure, ordering_set=oset)


@dataclass(frozen=True)
class ProposalDraw:
    ranking: np.ndarray
    log_prob: float


def _orderings_to_rankings(orderings):
    # row j of an ordering lists items best-to-worst; invert to ranks
    n, m = orderings.shape
    r = np.empty((n, m), dtype=np.int64)
    np.put_along_axis(r, orderings, np.arange(1, m + 1, dtype=np.int64)[None, :].repeat(n, axis=0), axis=1)
    return r


def _random_permutation_rows(rng, n, k):
    return np.argsort(rng.random((n, k)), axis=1)


def uniform_partial_draws(fixed, rng, size, free_items=None, free_ranks=None):
    """Uniform completions of a partial ranking, plus log q.

    Fixed items keep their observed ranks; the remaining ranks are
    uniformly permuted among the unranked items, so q = 1/(m - |A_n|)!.
    """
    m = fixed.size
    if free_items is None:
        free_items = np.nonzero(fixed == 0)[0]
        free_ranks = np.setdiff1d(np.arange(1, m + 1, dtype=np.int64), fixed[fixed > 0])
    out = np.tile(fixed, (size, 1))
    u = free_items.size
    if u:
        perm = _random_permutation_rows(rng, size, u)
        out[:, free_items] = free_ranks[perm]
    return out, float(-gammaln(u + 1))


def free_pairs_draws(m, rng, size):
    """Uniform rankings on the whole permutation space; q = 1/m!."""
    out = np.argsort(rng.random((size, m)), axis=1).astype(np.int64) + 1
    return out, float(-gammaln(m + 1))


def preference_draws(oset, m, rng, size):
    """Draws from the topological-ordering proposal, plus log q.

    Three cases: all items compared (uniform ordering), compared items
    preceding the rest (append a random permutation of the rest), or no
    relation (insert the rest at uniformly chosen positions).
    """
    n_ord = oset.n_orderings
    pick = rng.integers(n_ord, size=size)
    chosen = oset.orderings[pick]
    logq = -math.log(n_ord)
    if oset.relation == "all_compared":
        return _orderings_to_rankings(chosen), float(logq)
    rest = np.setdiff1d(np.arange(m, dtype=np.int64), oset.items)
    nr = rest.size
    arranged = rest[_random_permutation_rows(rng, size, nr)]
    logq -= gammaln(nr + 1)
    if oset.relation == "before_rest":
        full = np.concatenate([chosen, arranged], axis=1)
        return _orderings_to_rankings(full), float(logq)
    # unrelated: uniformly choose which of the m ordering slots hold the rest
    slots = np.sort(np.argsort(rng.random((size, m)), axis=1)[:, :nr], axis=1)
    full = np.empty((size, m), dtype=np.int64)
    mask = np.zeros((size, m), dtype=bool)
    np.put_along_axis(mask, slots, True, axis=1)
    full[mask] = arranged.ravel()
    full[~mask] = chosen.ravel()
    logq -= math.log(math.comb(m, nr))
    return _orderings_to_rankings(full), float(logq)


def pseudolikelihood_draws(fixed, alpha, rho, aux_kind, rng, size, free_items=None):
    """Sequential rank-assignment proposal biased toward the modal ranking.

    Unranked items are visited in a uniformly random order; each item
    takes one of the still-unassigned ranks x with probability
    proportional to exp(-alpha d(x, rho_i)), d being the footrule or
    Spearman coordinate distance. Only the realized assignment
    probabilities enter log q: for any fixed visiting order the
    assignment law is a proper distribution over the completions, so the
    order acts as auxiliary randomness and its probability must not be
    charged to the weights.

    Returns (rankings, logq per draw, visiting orders) - the orders are
    retained so a conditional filter can re-evaluate q for a kept
    trajectory under new parameters.
    """
    from .rankings import Distance

    m = fixed.size
    if free_items is None:
        free_items = np.nonzero(fixed == 0)[0]
    u = free_items.size
    out = np.tile(fixed, (size, 1))
    logq = np.zeros(size)
    orders = free_items[_random_permutation_rows(rng, size, u)] if u else np.empty((size, 0), np.int64)
    if u == 0:
        return out, logq, orders
    power = 2 if Distance(aux_kind) == Distance.SPEARMAN else 1
    ranks = np.arange(1, m + 1, dtype=np.float64)
    avail = np.zeros((size, m), dtype=bool)
    avail[:, np.setdiff1d(np.arange(1, m + 1), fixed[fixed > 0]) - 1] = True
    rows = np.arange(size)
    for j in range(u):
        item = orders[:, j]
        d = np.abs(ranks[None, :] - rho[item, None]).astype(np.float64)
        if power == 2:
            d *= d
        w = np.exp(-alpha * d)
        w[~avail] = 0.0
        tot = w.sum(axis=1)
        draw = rng.random(size) * tot
        chosen = (np.cumsum(w, axis=1) < draw[:, None]).sum(axis=1)
        chosen = np.minimum(chosen, m - 1)
        logq += np.log(w[rows, chosen] / tot)
        avail[rows, chosen] = False
        out[rows, item] = chosen + 1
    return out, logq, orders


def pseudolikelihood_log_prob(r, order, fixed, alpha, rho, aux_kind):
    """Re-evaluate log q of a realized (ranking, visiting order) path."""
    from .rankings import Distance

    m = fixed.size
    power = 2 if Distance(aux_kind) == Distance.SPEARMAN else 1
    avail = np.ones(m + 1, dtype=bool)
    avail[0] = False
    avail[fixed[fixed > 0]] = False
    logq = 0.0
    x = np.arange(m + 1, dtype=np.float64)
    for item in order:
        d = np.abs(x - rho[item])
        if power == 2:
            d *= d
        w = np.exp(-alpha * d)
        w[~avail] = 0.0
        logq += math.log(w[r[item]] / w.sum())
        avail[r[item]] = False
    return logq


# Single-draw wrappers used by the operation-level tests; the engine
# works with the batched forms above.


def uniform_partial_proposal(cs, rng):
    r, logq = uniform_partial_draws(cs.fixed, rng, 1)
    return ProposalDraw(ranking=r[0], log_prob=logq)


def preference_proposal(oset, m, rng):
    r, logq = preference_draws(oset, m, rng, 1)
    return ProposalDraw(ranking=r[0], log_prob=logq)


def pseudolikelihood_proposal(obs, params, aux_kind, rng):
    if params.n_clusters != 1:
        raise ValueError("the pseudolikelihood proposal requires a single cluster")
    from .rankings import Distance

    kind = Distance(aux_kind)
    if kind not in (Distance.FOOTRULE, Distance.SPEARMAN):
        raise ValueError("auxiliary distance must be footrule or spearman")
    fixed = obs.fixed if obs.kind == "partial" else obs.ranking
    r, logq, _ = pseudolikelihood_draws(
        fixed, float(params.alpha[0]), params.rho[0], kind, rng, 1
    )
    return ProposalDraw(ranking=r[0], log_prob=float(logq[0]))


def leap_and_shift(rho, rng):
    """Leap-and-shift with leap size one.

    Moves a uniformly chosen item's rank one step (up or down, uniform
    among the feasible directions) and shifts the displaced item back,
    yielding a proposal at Ulam distance one. With leap size one the
    transition kernel is symmetric.
    """
    rho = as_ranking(rho)
    m = rho.size
    if m < 2:
        raise ValueError("leap-and-shift needs at least two items")
    u = int(rng.integers(m))
    cur = rho[u]
    support = [x for x in (max(1, cur - 1), min(m, cur + 1)) if x != cur]
    new = support[int(rng.integers(len(support)))]
    out = rho.copy()
    delta = new - cur
    for i in range(m):
        if rho[i] == cur:
            out[i] = new
        elif delta > 0 and cur < rho[i] <= new:
            out[i] = rho[i] - 1
        elif delta < 0 and new <= rho[i] < cur:
            out[i] = rho[i] + 1
    return out
