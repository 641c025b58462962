"""Shared oracles and data generators for the test suite.

The oracles here are deliberately independent of the engine code paths
they check: brute-force enumeration over permutation space, grid
quadrature over the priors, and direct density evaluation.
"""

import math

import numpy as np
import pytest

from mallows_smc2.cardinality import PartitionFunction, build_cardinality_table
from mallows_smc2.model import log_error_likelihood, mismatch_count
from mallows_smc2.proposals import constraint_set
from mallows_smc2.rankings import Distance, distances_to, permutation_matrix


def brute_force_log_marginal(observations, params, kind, pairs_relation="unrelated"):
    """log p(y | theta) by exhaustive summation over latent rankings."""
    m = params.m
    perms = permutation_matrix(m)
    pf = PartitionFunction.from_table(build_cardinality_table(m, kind))
    log_z = np.array([pf.log_z(a) for a in params.alpha])
    total = 0.0
    for obs in observations:
        acc = 0.0
        if obs.kind == "pairs" and obs.noisy:
            member = np.ones(len(perms), dtype=bool)
        else:
            cs = constraint_set(obs, m, pairs_relation=pairs_relation)
            member = np.array([cs.contains(r) for r in perms])
        for c in range(params.n_clusters):
            d = distances_to(perms, params.rho[c], kind)
            like = params.tau[c] * np.exp(-params.alpha[c] * d - log_z[c])
            if obs.kind == "pairs" and obs.noisy:
                err = np.array(
                    [
                        math.exp(
                            log_error_likelihood(
                                mismatch_count(obs, r), obs.n_pairs, params.epsilon
                            )
                        )
                        for r in perms
                    ]
                )
                acc += float((like * err * member).sum())
            else:
                acc += float((like * member).sum())
        total += math.log(acc)
    return total


def sample_mallows_complete(m, alpha, rho, n, rng, kind=Distance.FOOTRULE, sweeps=60):
    """Draw complete rankings from the Mallows density.

    For m <= 7 the draws are exact (enumeration); otherwise a
    Metropolis chain over adjacent transpositions, long enough to mix at
    the small dispersions used in the experiments.
    """
    rho = np.asarray(rho, dtype=np.int64)
    if m <= 7:
        perms = permutation_matrix(m)
        d = distances_to(perms, rho, kind)
        p = np.exp(-alpha * d)
        p /= p.sum()
        idx = rng.choice(len(perms), size=n, p=p)
        return perms[idx].copy()
    out = np.empty((n, m), dtype=np.int64)
    for i in range(n):
        r = rng.permutation(m) + 1
        d = float(distances_to(r[None, :], rho, kind)[0])
        for _ in range(sweeps * m):
            j = int(rng.integers(m - 1))
            cand = r.copy()
            a, b = np.nonzero(r == j + 1)[0][0], np.nonzero(r == j + 2)[0][0]
            cand[a], cand[b] = r[b], r[a]
            d_new = float(distances_to(cand[None, :], rho, kind)[0])
            if math.log(rng.random()) < -alpha * (d_new - d):
                r, d = cand, d_new
        out[i] = r
    return out


def weighted_mean(cloud, key="alpha", component=0):
    w = np.exp(cloud["log_weight"])
    return float((w * cloud[key][:, component]).sum())


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
