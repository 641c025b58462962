"""Model density kernels, error model, priors, and exact increments."""

import math

import numpy as np
import pytest

from mallows_smc2.cardinality import PartitionFunction, build_cardinality_table
from mallows_smc2.model import (
    Batch,
    Observation,
    Priors,
    StaticParams,
    cluster_probs,
    complete_data_log_increment,
    log_error_likelihood,
    log_mallows_kernel,
    log_prior_alpha,
    mismatch_count,
    sample_prior,
    sample_truncated_beta,
)
from mallows_smc2.rankings import Distance, distances_to, permutation_matrix


def pf_for(m, kind=Distance.FOOTRULE):
    return PartitionFunction.from_table(build_cardinality_table(m, kind))


class TestMallowsKernel:
    def test_uniform_case(self):
        params = StaticParams(alpha=[0.0], rho=[[1, 2, 3]], tau=[1.0])
        pf = pf_for(3)
        for r in permutation_matrix(3):
            assert log_mallows_kernel(r, params, 0, pf) == pytest.approx(-math.log(6))

    def test_zero_distance(self):
        pf = pf_for(3)
        params = StaticParams(alpha=[0.5], rho=[[1, 2, 3]], tau=[1.0])
        assert log_mallows_kernel(np.array([1, 2, 3]), params, 0, pf) == pytest.approx(
            -pf.log_z(0.5)
        )

    def test_m5_footrule_example(self):
        pf = pf_for(5)
        params = StaticParams(alpha=[0.3], rho=[[1, 2, 3, 4, 5]], tau=[1.0])
        got = log_mallows_kernel(np.array([2, 1, 3, 4, 5]), params, 0, pf)
        assert got == pytest.approx(-0.3 * 2 - pf.log_z(0.3))

    def test_bad_cluster_index(self):
        pf = pf_for(3)
        params = StaticParams(alpha=[0.5], rho=[[1, 2, 3]], tau=[1.0])
        with pytest.raises(IndexError):
            log_mallows_kernel(np.array([1, 2, 3]), params, 1, pf)

    @pytest.mark.parametrize("m", [3, 4, 5])
    def test_mixture_normalization(self, m):
        rng = np.random.default_rng(m)
        pf = pf_for(m)
        params = StaticParams(
            alpha=rng.gamma(2.0, 0.5, size=2),
            rho=np.stack([rng.permutation(m) + 1 for _ in range(2)]),
            tau=[0.3, 0.7],
        )
        total = 0.0
        for r in permutation_matrix(m):
            for c in range(2):
                total += math.exp(log_mallows_kernel(r, params, c, pf))
        assert total == pytest.approx(1.0, abs=1e-10)


class TestClusterProbs:
    def test_single_cluster(self):
        pf = pf_for(3)
        params = StaticParams(alpha=[0.4], rho=[[1, 2, 3]], tau=[1.0])
        assert cluster_probs(np.array([2, 1, 3]), params, pf).tolist() == [1.0]

    def test_identical_clusters(self):
        pf = pf_for(3)
        params = StaticParams(
            alpha=[0.4, 0.4], rho=[[1, 2, 3], [1, 2, 3]], tau=[0.5, 0.5]
        )
        p = cluster_probs(np.array([2, 1, 3]), params, pf)
        assert p == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_two_cluster_example(self):
        # footrule, alpha=(1,1), rho1=(1,2,3), rho2=(3,2,1), r=(1,2,3):
        # d(r,rho2)=4 so probabilities (1, e^-4)/(1+e^-4)
        pf = pf_for(3)
        params = StaticParams(
            alpha=[1.0, 1.0], rho=[[1, 2, 3], [3, 2, 1]], tau=[0.5, 0.5]
        )
        p = cluster_probs(np.array([1, 2, 3]), params, pf)
        expect = np.array([1.0, math.exp(-4)])
        expect /= expect.sum()
        assert p == pytest.approx(expect, abs=1e-12)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)


class TestErrorModel:
    def test_mismatch_examples(self):
        obs = Observation.preferences(1, [[0, 1]], noisy=True)
        assert mismatch_count(obs, np.array([1, 2, 3])) == 0
        assert mismatch_count(obs, np.array([2, 1, 3])) == 1
        obs = Observation.preferences(1, [[0, 1], [1, 2], [0, 2]], noisy=True)
        assert mismatch_count(obs, np.array([3, 1, 2])) == 2

    def test_reverse_complement(self):
        rng = np.random.default_rng(3)
        pairs = np.array([[0, 1], [1, 2], [3, 0]])
        obs = Observation.preferences(1, pairs, noisy=True)
        rev = Observation.preferences(1, pairs[:, ::-1], noisy=True)
        for _ in range(30):
            r = rng.permutation(4) + 1
            assert mismatch_count(obs, r) + mismatch_count(rev, r) == 3

    def test_log_error_likelihood(self):
        assert log_error_likelihood(0, 4, 0.0) == 0.0
        assert log_error_likelihood(1, 4, 0.0) == -math.inf
        assert log_error_likelihood(1, 4, 0.1) == pytest.approx(
            math.log(0.1 / 0.9) + 4 * math.log(0.9)
        )
        assert log_error_likelihood(0, 2, 0.25) == pytest.approx(2 * math.log(0.75))
        with pytest.raises(ValueError):
            log_error_likelihood(0, 2, 0.6)

    def test_self_preference_rejected(self):
        with pytest.raises(ValueError):
            Observation.preferences(1, [[2, 2]])


class TestPriors:
    def test_single_cluster_tau(self, rng):
        params = sample_prior(Priors(n_clusters=1), 4, rng)
        assert params.tau.tolist() == [1.0]
        assert params.epsilon == 0.0

    def test_gamma_moments(self, rng):
        pri = Priors(gamma_shape=1.0, gamma_rate=0.5)
        draws = np.array([sample_prior(pri, 3, rng).alpha[0] for _ in range(100000)])
        se = draws.std() / math.sqrt(len(draws))
        assert abs(draws.mean() - 2.0) < 3 * se

    def test_rho_uniform(self, rng):
        m = 4
        pri = Priors()
        first = np.zeros(m)
        n = 20000
        for _ in range(n):
            rho = sample_prior(pri, m, rng).rho[0]
            first[np.nonzero(rho == 1)[0][0]] += 1
        freq = first / n
        se = math.sqrt(0.25 * 0.75 / n)
        assert np.all(np.abs(freq - 1 / m) < 4 * se)

    def test_dirichlet_and_epsilon(self, rng):
        pri = Priors(dirichlet_psi=2.0, n_clusters=3, beta_kappa1=1.0, beta_kappa2=1.0)
        for _ in range(200):
            p = sample_prior(pri, 3, rng, noisy=True)
            assert p.tau.sum() == pytest.approx(1.0, abs=1e-12)
            assert 0 <= p.epsilon < 0.5

    def test_truncated_beta_rejection_and_fallback(self, rng):
        draws = [sample_truncated_beta(2.0, 2.0, rng) for _ in range(2000)]
        assert max(draws) < 0.5
        # heavily right-shifted shape forces the bisection fallback
        draws = [sample_truncated_beta(50.0, 1.0, rng) for _ in range(50)]
        assert max(draws) < 0.5 and min(draws) > 0.3

    def test_invalid(self):
        with pytest.raises(ValueError):
            Priors(gamma_shape=0.0)
        with pytest.raises(ValueError):
            Priors(n_clusters=0)

    def test_log_prior_alpha(self):
        pri = Priors(gamma_shape=1.0, gamma_rate=0.7)
        assert log_prior_alpha(2.0, pri) - log_prior_alpha(1.0, pri) == pytest.approx(-0.7)
        pri2 = Priors(gamma_shape=2.0, gamma_rate=1.0)
        from scipy.stats import gamma as gammadist

        for a in (0.5, 1.0, math.e):
            ref = gammadist.logpdf(a, a=2.0, scale=1.0)
            assert log_prior_alpha(a, pri2, include_constant=True) == pytest.approx(ref)
        assert log_prior_alpha(0.0, pri2) == -math.inf


class TestStaticParamsInvariants:
    def test_tau_must_normalize(self):
        with pytest.raises(ValueError):
            StaticParams(alpha=[1.0, 1.0], rho=[[1, 2], [2, 1]], tau=[0.6, 0.5])

    def test_epsilon_range(self):
        with pytest.raises(ValueError):
            StaticParams(alpha=[1.0], rho=[[1, 2]], tau=[1.0], epsilon=0.5)

    def test_prior_draws_valid(self, rng):
        pri = Priors(n_clusters=2, dirichlet_psi=1.5)
        for _ in range(100):
            p = sample_prior(pri, 5, rng, noisy=True)
            assert p.n_clusters == 2 and p.m == 5  # validation ran in __post_init__


class TestCompleteIncrement:
    def test_uniform(self):
        pf = pf_for(4)
        params = StaticParams(alpha=[0.0], rho=[[1, 2, 3, 4]], tau=[1.0])
        batch = Batch(1, [Observation.complete(1, [2, 1, 4, 3])])
        assert complete_data_log_increment(batch, params, pf) == pytest.approx(-math.log(24))

    def test_zero_distance(self):
        pf = pf_for(3)
        params = StaticParams(alpha=[1.0], rho=[[1, 2, 3]], tau=[1.0])
        batch = Batch(1, [Observation.complete(1, [1, 2, 3])])
        assert complete_data_log_increment(batch, params, pf) == pytest.approx(-pf.log_z(1.0))

    def test_mixture_against_brute_force(self, rng):
        m = 4
        pf = pf_for(m)
        params = StaticParams(
            alpha=[0.4, 1.2],
            rho=[[1, 2, 3, 4], [4, 3, 2, 1]],
            tau=[0.35, 0.65],
        )
        rows = [rng.permutation(m) + 1 for _ in range(3)]
        batch = Batch(1, [Observation.complete(i, r) for i, r in enumerate(rows)])
        expect = 0.0
        for r in rows:
            acc = 0.0
            for c in range(2):
                d = float(distances_to(r[None, :], params.rho[c], Distance.FOOTRULE)[0])
                acc += params.tau[c] * math.exp(-params.alpha[c] * d - pf.log_z(params.alpha[c]))
            expect += math.log(acc)
        assert complete_data_log_increment(batch, params, pf) == pytest.approx(expect, rel=1e-12)

    def test_rejects_partial(self):
        pf = pf_for(3)
        params = StaticParams(alpha=[1.0], rho=[[1, 2, 3]], tau=[1.0])
        batch = Batch(1, [Observation.partial(1, [1, 0, 0])])
        with pytest.raises(ValueError):
            complete_data_log_increment(batch, params, pf)


class TestBatchInvariants:
    def test_duplicate_users(self):
        with pytest.raises(ValueError):
            Batch(1, [Observation.complete(1, [1, 2]), Observation.complete(1, [2, 1])])

    def test_partial_validation(self):
        with pytest.raises(ValueError):
            Observation.partial(1, [1, 1, 0])
        obs = Observation.partial(2, [2, 0, 1])
        assert obs.kind == "partial"
        full = Observation.partial(3, [2, 3, 1])
        assert full.kind == "complete"
