"""Numba @njit implementations of the hot kernels.

Semantically identical to `_numpy`; loops replace broadcasting so the
per-row work stays in registers. Compiled objects are cached on disk.
"""

import numpy as np
from numba import njit

FOOTRULE, SPEARMAN, KENDALL, CAYLEY, HAMMING, ULAM = range(6)


@njit(cache=True)
def _dist_to_ref_impl(X, ref, kind):
    n, m = X.shape
    out = np.empty(n, dtype=np.float64)
    inv = np.empty(m, dtype=np.int64)
    for k in range(m):
        inv[ref[k] - 1] = k
    seen = np.empty(m, dtype=np.bool_)
    tails = np.empty(m, dtype=np.int64)
    for i in range(n):
        if kind == 0:  # footrule
            acc = 0
            for j in range(m):
                d = X[i, j] - ref[j]
                acc += d if d >= 0 else -d
            out[i] = acc
        elif kind == 1:  # spearman
            acc = 0
            for j in range(m):
                d = X[i, j] - ref[j]
                acc += d * d
            out[i] = acc
        elif kind == 2:  # kendall
            acc = 0
            for j in range(m):
                for k in range(j + 1, m):
                    if (X[i, j] - X[i, k]) * (ref[j] - ref[k]) < 0:
                        acc += 1
            out[i] = acc
        elif kind == 4:  # hamming
            acc = 0
            for j in range(m):
                if X[i, j] != ref[j]:
                    acc += 1
            out[i] = acc
        elif kind == 3:  # cayley: m minus cycle count of row o ref^{-1}
            for j in range(m):
                seen[j] = False
            cycles = 0
            for start in range(m):
                if not seen[start]:
                    cycles += 1
                    j = start
                    while not seen[j]:
                        seen[j] = True
                        j = X[i, inv[j]] - 1
            out[i] = m - cycles
        else:  # ulam: m minus LIS of row o ref^{-1}
            size = 0
            for k in range(m):
                v = X[i, inv[k]]
                lo, hi = 0, size
                while lo < hi:
                    mid = (lo + hi) // 2
                    if tails[mid] < v:
                        lo = mid + 1
                    else:
                        hi = mid
                tails[lo] = v
                if lo == size:
                    size += 1
            out[i] = m - size
    return out


def dist_to_ref(X, ref, kind):
    X = np.ascontiguousarray(X, dtype=np.int64)
    if X.ndim == 1:
        X = X[None, :]
    ref = np.ascontiguousarray(ref, dtype=np.int64)
    return _dist_to_ref_impl(X, ref, kind)


@njit(cache=True)
def logsumexp_1d(x):
    hi = -np.inf
    for i in range(x.shape[0]):
        if x[i] > hi:
            hi = x[i]
    if hi == -np.inf or np.isnan(hi):
        return hi
    acc = 0.0
    for i in range(x.shape[0]):
        acc += np.exp(x[i] - hi)
    return hi + np.log(acc)


@njit(cache=True)
def mix_log_weights(D, alpha, log_coef):
    n, C = D.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        hi = -np.inf
        for c in range(C):
            t = log_coef[c] - alpha[c] * D[i, c]
            if t > hi:
                hi = t
        if hi == -np.inf:
            out[i] = -np.inf
            continue
        acc = 0.0
        for c in range(C):
            acc += np.exp(log_coef[c] - alpha[c] * D[i, c] - hi)
        out[i] = hi + np.log(acc)
    return out


@njit(cache=True)
def cluster_log_probs(D, alpha, log_coef):
    n, C = D.shape
    out = np.empty((n, C), dtype=np.float64)
    for i in range(n):
        hi = -np.inf
        for c in range(C):
            out[i, c] = log_coef[c] - alpha[c] * D[i, c]
            if out[i, c] > hi:
                hi = out[i, c]
        acc = 0.0
        for c in range(C):
            acc += np.exp(out[i, c] - hi)
        lse = hi + np.log(acc)
        for c in range(C):
            out[i, c] -= lse
    return out


@njit(cache=True)
def _searchsorted_right(cum, u):
    n = cum.shape[0]
    out = np.empty(u.shape[0], dtype=np.int64)
    for i in range(u.shape[0]):
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) // 2
            if cum[mid] <= u[i]:
                lo = mid + 1
            else:
                hi = mid
        out[i] = lo if lo < n else n - 1
    return out


@njit(cache=True)
def resample_multinomial(W, us):
    return _searchsorted_right(np.cumsum(W), us)


@njit(cache=True)
def resample_stratified(W, us):
    S = W.shape[0]
    pos = np.empty(S, dtype=np.float64)
    for s in range(S):
        pos[s] = (s + us[s]) / S
    return _searchsorted_right(np.cumsum(W), pos)


@njit(cache=True)
def resample_systematic(W, u):
    S = W.shape[0]
    pos = np.empty(S, dtype=np.float64)
    for s in range(S):
        pos[s] = (s + u) / S
    return _searchsorted_right(np.cumsum(W), pos)


@njit(cache=True)
def enumerate_orderings(preds, cap):
    k = preds.shape[0]
    full = (np.int64(1) << k) - 1
    size = 1024 if cap > 1024 else cap
    out = np.empty((size, k), dtype=np.int64)
    path = np.empty(k, dtype=np.int64)
    choice = np.zeros(k + 1, dtype=np.int64)
    placed = np.int64(0)
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
                depth -= 1
                placed &= ~(np.int64(1) << path[depth])
                while depth >= 0:
                    v = choice[depth]
                    ok = -1
                    while v < k:
                        if placed & (np.int64(1) << v) == 0 and preds[v] & (full & ~placed) == 0:
                            ok = v
                            break
                        v += 1
                    if ok >= 0:
                        return out[:n], -1
                    depth -= 1
                    if depth >= 0:
                        placed &= ~(np.int64(1) << path[depth])
                return out[:n], n
            depth -= 1
            placed &= ~(np.int64(1) << path[depth])
            continue
        v = choice[depth]
        found = -1
        while v < k:
            if placed & (np.int64(1) << v) == 0 and preds[v] & (full & ~placed) == 0:
                found = v
                break
            v += 1
        if found >= 0:
            path[depth] = found
            choice[depth] = found + 1
            placed |= np.int64(1) << found
            depth += 1
            choice[depth] = 0
        else:
            depth -= 1
            if depth < 0:
                break
            placed &= ~(np.int64(1) << path[depth])
    return out[:n], n


@njit(cache=True)
def resample_residual(W, us):
    S = W.shape[0]
    idx = np.empty(S, dtype=np.int64)
    resid = np.empty(S, dtype=np.float64)
    k = 0
    for s in range(S):
        c = int(np.floor(S * W[s]))
        resid[s] = S * W[s] - c
        for _ in range(c):
            idx[k] = s
            k += 1
    left = S - k
    if left > 0:
        tot = 0.0
        for s in range(S):
            tot += resid[s]
        for s in range(S):
            resid[s] /= tot
        extra = _searchsorted_right(np.cumsum(resid), us[:left])
        for i in range(left):
            idx[k + i] = extra[i]
    return idx
