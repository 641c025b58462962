"""Pure-numpy reference implementations of the hot kernels.

Distance kind codes match :class:`mallows_smc2.rankings.Distance`:
0=footrule, 1=spearman, 2=kendall, 3=cayley, 4=hamming, 5=ulam.
"""

import numpy as np

FOOTRULE, SPEARMAN, KENDALL, CAYLEY, HAMMING, ULAM = range(6)


def _compose_with_ref_inverse(X, ref):
    # row -> row o ref^{-1}, i.e. sequence k -> rank in row of the item ref ranks k
    inv = np.empty(ref.shape[0], dtype=np.int64)
    inv[ref - 1] = np.arange(ref.shape[0])
    return X[:, inv]


def _lis_length(seq):
    # patience sorting; seq is a permutation of 1..m
    tails = []
    for v in seq:
        lo, hi = 0, len(tails)
        while lo < hi:
            mid = (lo + hi) // 2
            if tails[mid] < v:
                lo = mid + 1
            else:
                hi = mid
        if lo == len(tails):
            tails.append(v)
        else:
            tails[lo] = v
    return len(tails)


def dist_to_ref(X, ref, kind):
    """Distances from each row of `X` (n, m) to the ranking `ref` (m,).

    Returns a float64 array of length n. Rankings hold 1-based rank
    values indexed by item.
    """
    X = np.ascontiguousarray(X, dtype=np.int64)
    ref = np.ascontiguousarray(ref, dtype=np.int64)
    if X.ndim == 1:
        X = X[None, :]
    n, m = X.shape
    if kind == FOOTRULE:
        return np.abs(X - ref).sum(axis=1).astype(np.float64)
    if kind == SPEARMAN:
        d = X - ref
        return (d * d).sum(axis=1).astype(np.float64)
    if kind == KENDALL:
        iu, ju = np.triu_indices(m, k=1)
        disc = (X[:, iu] - X[:, ju]) * (ref[iu] - ref[ju]) < 0
        return disc.sum(axis=1).astype(np.float64)
    if kind == HAMMING:
        return (X != ref).sum(axis=1).astype(np.float64)
    comp = _compose_with_ref_inverse(X, ref)
    out = np.empty(n, dtype=np.float64)
    if kind == CAYLEY:
        for i in range(n):
            seq = comp[i]
            seen = np.zeros(m, dtype=bool)
            cycles = 0
            for start in range(m):
                if not seen[start]:
                    cycles += 1
                    j = start
                    while not seen[j]:
                        seen[j] = True
                        j = seq[j] - 1
            out[i] = m - cycles
        return out
    if kind == ULAM:
        for i in range(n):
            out[i] = m - _lis_length(comp[i])
        return out
    raise ValueError(f"unknown distance kind code {kind}")


def logsumexp_1d(x):
    x = np.asarray(x, dtype=np.float64)
    hi = np.max(x) if x.size else -np.inf
    if not np.isfinite(hi):
        return float(hi)
    return float(hi + np.log(np.exp(x - hi).sum()))


def mix_log_weights(D, alpha, log_coef):
    """log sum_c exp(log_coef[c] - alpha[c] * D[:, c]) for each row of D.

    `log_coef` carries log(tau_c) - log Z(alpha_c); the result is the log
    Mallows-mixture kernel evaluated at the distances in D (n, C).
    """
    t = log_coef[None, :] - alpha[None, :] * D
    hi = t.max(axis=1)
    safe = np.isfinite(hi)
    out = np.full(D.shape[0], -np.inf)
    if np.any(safe):
        th = t[safe] - hi[safe, None]
        out[safe] = hi[safe] + np.log(np.exp(th).sum(axis=1))
    return out


def cluster_log_probs(D, alpha, log_coef):
    """Row-normalized log membership probabilities, shape (n, C)."""
    t = log_coef[None, :] - alpha[None, :] * D
    hi = t.max(axis=1, keepdims=True)
    t = t - hi
    return t - np.log(np.exp(t).sum(axis=1, keepdims=True))


def _searchsorted_right(cum, u):
    idx = np.searchsorted(cum, u, side="right")
    return np.minimum(idx, cum.shape[0] - 1).astype(np.int64)


def resample_multinomial(W, us):
    """Ancestor indices from iid uniforms `us`; W sums to one."""
    return _searchsorted_right(np.cumsum(W), us)


def resample_stratified(W, us):
    """Stratified positions (s + us[s]) / S with us iid uniform."""
    S = W.shape[0]
    pos = (np.arange(S) + us) / S
    return _searchsorted_right(np.cumsum(W), pos)


def resample_systematic(W, u):
    """Systematic positions (s + u) / S with a single uniform u."""
    S = W.shape[0]
    pos = (np.arange(S) + u) / S
    return _searchsorted_right(np.cumsum(W), pos)


def resample_residual(W, us):
    """Residual resampling: floor(S*W) deterministic copies, multinomial rest."""
    S = W.shape[0]
    scaled = S * W
    counts = np.floor(scaled).astype(np.int64)
    idx = np.repeat(np.arange(S, dtype=np.int64), counts)
    left = S - idx.shape[0]
    if left > 0:
        resid = scaled - counts
        resid /= resid.sum()
        extra = _searchsorted_right(np.cumsum(resid), us[:left])
        idx = np.concatenate([idx, extra])
    return idx


def enumerate_orderings(preds, cap):
    """All topological orderings of a k-node DAG given as predecessor
    bitmasks, depth-first with ascending node index at every level.

    Returns (orderings, count); count == -1 signals the cap was hit and
    the array then holds the first `cap` orderings found.
    """
    k = preds.shape[0]
    full = (1 << k) - 1
    size = 1024 if cap > 1024 else cap
    out = np.empty((size, k), dtype=np.int64)
    path = np.empty(k, dtype=np.int64)
    choice = np.zeros(k + 1, dtype=np.int64)
    placed = 0
    depth = 0
    n = 0
    while True:
        if depth == k:
            if n == size:
                size = min(size * 2, cap)
                grown = np.empty((size, k), dtype=np.int64)
                grown[:n] = out
                out = grown
            out[n] = path
            n += 1
            if n == cap:
                # probe for one more solution to distinguish exact fit from overflow
                depth -= 1
                placed &= ~(1 << path[depth])
                while depth >= 0:
                    v = choice[depth]
                    ok = -1
                    while v < k:
                        if not placed & (1 << v) and preds[v] & (full & ~placed) == 0:
                            ok = v
                            break
                        v += 1
                    if ok >= 0:
                        return out[:n], -1
                    depth -= 1
                    if depth >= 0:
                        placed &= ~(1 << path[depth])
                return out[:n], n
            depth -= 1
            placed &= ~(1 << path[depth])
            continue
        v = choice[depth]
        found = -1
        while v < k:
            if not placed & (1 << v) and preds[v] & (full & ~placed) == 0:
                found = v
                break
            v += 1
        if found >= 0:
            path[depth] = found
            choice[depth] = found + 1
            placed |= 1 << found
            depth += 1
            choice[depth] = 0
        else:
            depth -= 1
            if depth < 0:
                break
            placed &= ~(1 << path[depth])
    return out[:n], n
