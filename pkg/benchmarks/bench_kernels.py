"""Compare the numba kernels against the pure-numpy fallback.

Run as a script; prints a table of per-call times for both backends at
engine-realistic shapes, plus an end-to-end likelihood sweep. Select
what the package itself runs via MALLOWS_SMC2_BACKEND=numpy|numba.
"""

import time

import numpy as np

from mallows_smc2.kernels import _numpy as np_impl

try:
    from mallows_smc2.kernels import _numba as nb_impl
except ImportError:
    nb_impl = None

KINDS = ["footrule", "spearman", "kendall", "cayley", "hamming", "ulam"]


def timeit(fn, *args, repeat=30):
    fn(*args)  # warm (and JIT-compile)
    best = min(
        _time_once(fn, args) for _ in range(repeat)
    )
    return best


def _time_once(fn, args):
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


def fmt(seconds):
    if seconds < 1e-3:
        return f"{seconds * 1e6:8.1f} us"
    return f"{seconds * 1e3:8.2f} ms"


def row(name, np_t, nb_t):
    speed = f"{np_t / nb_t:6.1f}x" if nb_t else "      -"
    nb_s = fmt(nb_t) if nb_t else "       n/a"
    print(f"{name:<34} {fmt(np_t)}  {nb_s}  {speed}")


def main():
    rng = np.random.default_rng(0)
    n, m, C, S = 20000, 10, 2, 4096

    X = np.argsort(rng.random((n, m)), axis=1).astype(np.int64) + 1
    ref = rng.permutation(m).astype(np.int64) + 1
    D = rng.integers(0, 40, size=(n, C)).astype(np.float64)
    alpha = rng.gamma(1.0, 1.0, size=C)
    coef = np.log(rng.dirichlet(np.ones(C)))
    W = rng.dirichlet(np.ones(S))
    us = rng.random(S)

    print(f"{'kernel':<34} {'numpy':>11}  {'numba':>10}  speedup")
    print("-" * 70)
    for code, kind in enumerate(KINDS):
        np_t = timeit(np_impl.dist_to_ref, X, ref, code, repeat=10)
        nb_t = timeit(nb_impl.dist_to_ref, X, ref, code, repeat=10) if nb_impl else None
        row(f"dist_to_ref[{kind}] n={n} m={m}", np_t, nb_t)

    np_t = timeit(np_impl.mix_log_weights, D, alpha, coef)
    nb_t = timeit(nb_impl.mix_log_weights, D, alpha, coef) if nb_impl else None
    row(f"mix_log_weights n={n} C={C}", np_t, nb_t)

    np_t = timeit(np_impl.cluster_log_probs, D, alpha, coef)
    nb_t = timeit(nb_impl.cluster_log_probs, D, alpha, coef) if nb_impl else None
    row(f"cluster_log_probs n={n} C={C}", np_t, nb_t)

    for name in ("resample_multinomial", "resample_stratified", "resample_residual"):
        np_t = timeit(getattr(np_impl, name), W, us)
        nb_t = timeit(getattr(nb_impl, name), W, us) if nb_impl else None
        row(f"{name} S={S}", np_t, nb_t)
    np_t = timeit(np_impl.resample_systematic, W, 0.37)
    nb_t = timeit(nb_impl.resample_systematic, W, 0.37) if nb_impl else None
    row(f"resample_systematic S={S}", np_t, nb_t)

    # 9 free nodes plus one constraint: 181440 linear extensions
    preds = np.zeros(9, dtype=np.int64)
    preds[8] = 1
    np_t = timeit(np_impl.enumerate_orderings, preds, 10**6, repeat=3)
    nb_t = timeit(nb_impl.enumerate_orderings, preds, 10**6, repeat=3) if nb_impl else None
    row("enumerate_orderings 181440 exts", np_t, nb_t)

    # end-to-end flavored sweep: mixture increments of 1000 rankings
    # against a 2-cluster parameter particle, repeated over a cloud
    Y = X[:1000]

    def sweep(impl):
        out = np.zeros(1)
        for c in range(C):
            d = impl.dist_to_ref(Y, ref, 0)
        DD = np.stack([impl.dist_to_ref(Y, ref, 0) for _ in range(C)], axis=1)
        return impl.mix_log_weights(DD, alpha, coef).sum()

    np_t = timeit(sweep, np_impl, repeat=10)
    nb_t = timeit(sweep, nb_impl, repeat=10) if nb_impl else None
    row("likelihood sweep N=1000 C=2", np_t, nb_t)


if __name__ == "__main__":
    main()
