"""The Bayesian Mallows mixture model.

Static parameters are theta = {alpha_c, rho_c, tau_c}_{c=1..C} plus an
error rate epsilon used only with mutually inconsistent ("noisy")
pairwise preferences. The density of a latent ranking r is

    p(r | theta) = sum_c tau_c Z(alpha_c)^{-1} exp{-alpha_c d(r, rho_c)}

and observations are complete rankings, partial/top-k rankings, or sets
of pairwise preferences with a Bernoulli error model at rate epsilon.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc, gammaln

from . import kernels
from .rankings import as_ranking

TAU_TOL = 1e-12
EPSILON_UPPER = 0.5


@dataclass
class StaticParams:
    """Per-cluster (alpha, rho, tau) plus the error rate epsilon.

    `alpha` has shape (C,), `rho` shape (C, m) with 1-based rank values,
    `tau` shape (C,) summing to one.
    """

    alpha: np.ndarray
    rho: np.ndarray
    tau: np.ndarray
    epsilon: float = 0.0

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        self.rho = np.atleast_2d(np.asarray(self.rho, dtype=np.int64))
        self.tau = np.atleast_1d(np.asarray(self.tau, dtype=np.float64))
        C = self.alpha.shape[0]
        if self.rho.shape[0] != C or self.tau.shape[0] != C:
            raise ValueError("alpha, rho, tau must agree on the cluster count")
        if np.any(self.alpha < 0):
            raise ValueError("dispersions must be non-negative")
        if abs(self.tau.sum() - 1.0) > TAU_TOL or np.any(self.tau < 0) or np.any(self.tau > 1):
            raise ValueError("tau must be a probability vector")
        for c in range(C):
            as_ranking(self.rho[c])
        if not 0.0 <= self.epsilon < EPSILON_UPPER:
            raise ValueError(f"epsilon must lie in [0, {EPSILON_UPPER})")

    @property
    def n_clusters(self):
        return self.alpha.shape[0]

    @property
    def m(self):
        return self.rho.shape[1]


@dataclass(frozen=True)
class Priors:
    """Hyperparameters: Gamma(shape, rate) on each alpha, uniform rho,
    symmetric Dirichlet(psi) on tau, Beta(kappa1, kappa2) truncated to
    [0, 0.5) on epsilon."""

    gamma_shape: float = 1.0
    gamma_rate: float = 0.5
    dirichlet_psi: float = 1.0
    beta_kappa1: float = 1.0
    beta_kappa2: float = 1.0
    n_clusters: int = 1

    def __post_init__(self):
        for name in ("gamma_shape", "gamma_rate", "dirichlet_psi", "beta_kappa1", "beta_kappa2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")


@dataclass
class Observation:
    """One user's data: a complete ranking, a partial ranking, or pairs.

    For partial rankings `fixed` is a length-m array with the observed
    rank of each observed item and 0 for unobserved items. Pairs are
    stored as a (p, 2) array of 0-based item indices, row (s, t) meaning
    item s is preferred to item t.
    """

    user: int
    kind: str  # complete | partial | pairs
    ranking: np.ndarray = None
    fixed: np.ndarray = None
    pairs: np.ndarray = None
    noisy: bool = False

    @classmethod
    def complete(cls, user, ranking):
        return cls(user=user, kind="complete", ranking=as_ranking(ranking))

    @classmethod
    def partial(cls, user, fixed):
        fixed = np.asarray(fixed, dtype=np.int64)
        m = fixed.size
        got = fixed[fixed > 0]
        if got.size != np.unique(got).size or np.any(fixed < 0) or np.any(fixed > m):
            raise ValueError(f"user {user}: observed ranks must be distinct values in 1..{m}")
        if got.size == m:
            return cls.complete(user, fixed)
        return cls(user=user, kind="partial", fixed=fixed)

    @classmethod
    def preferences(cls, user, pairs, noisy=False):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ValueError(f"user {user}: self-preference in pair list")
        return cls(user=user, kind="pairs", pairs=pairs, noisy=noisy)

    @property
    def n_pairs(self):
        return 0 if self.pairs is None else self.pairs.shape[0]


@dataclass
class Batch:
    """New users entering the pool at one timepoint; user ids are
    disjoint across timepoints (each user enters exactly once)."""

    t: int
    observations: list = field(default_factory=list)

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("timepoints are 1-based")
        ids = [o.user for o in self.observations]
        if len(ids) != len(set(ids)):
            raise ValueError(f"batch {self.t}: duplicate user ids")


def log_z_per_cluster(params, pf):
    """log Z(alpha_c) for each cluster, shape (C,)."""
    return pf.log_z_many(params.alpha)


def log_coefficients(params, pf):
    """log tau_c - log Z(alpha_c): the cluster weights of the log kernel."""
    with np.errstate(divide="ignore"):
        return np.log(params.tau) - log_z_per_cluster(params, pf)


def log_mallows_kernel(r, params, c, pf):
    """log[ tau_c Z(alpha_c)^{-1} exp(-alpha_c d(r, rho_c)) ]."""
    if not 0 <= c < params.n_clusters:
        raise IndexError(f"cluster index {c} out of range")
    r = as_ranking(r)
    d = kernels.dist_to_ref(r[None, :], params.rho[c], int(pf.kind))[0]
    with np.errstate(divide="ignore"):
        return float(np.log(params.tau[c]) - pf.log_z(params.alpha[c]) - params.alpha[c] * d)


def log_mixture_density(rows, params, pf):
    """log p(r | theta) for each row of `rows`, marginalized over clusters."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.int64))
    D = np.empty((rows.shape[0], params.n_clusters), dtype=np.float64)
    for c in range(params.n_clusters):
        D[:, c] = kernels.dist_to_ref(rows, params.rho[c], int(pf.kind))
    return kernels.mix_log_weights(D, params.alpha, log_coefficients(params, pf))


def cluster_probs(r, params, pf):
    """Posterior cluster membership probabilities for a latent ranking."""
    r = as_ranking(r)
    D = np.empty((1, params.n_clusters), dtype=np.float64)
    for c in range(params.n_clusters):
        D[0, c] = kernels.dist_to_ref(r[None, :], params.rho[c], int(pf.kind))[0]
    logp = kernels.cluster_log_probs(D, params.alpha, log_coefficients(params, pf))
    return np.exp(logp[0])


def mismatch_count(obs, r):
    """Number of stated pairs (s, t) contradicted by r (r[s] > r[t])."""
    if obs.kind != "pairs":
        raise ValueError("mismatch_count needs a preference observation")
    r = np.asarray(r, dtype=np.int64)
    if np.any(obs.pairs >= r.size) or np.any(obs.pairs < 0):
        raise IndexError("pair item index out of range")
    return int(np.sum(r[obs.pairs[:, 0]] > r[obs.pairs[:, 1]]))


def log_error_likelihood(n_mismatch, n_pairs, epsilon):
    """log p_eps(y | r) for a preference observation.

    mismatch * log(eps/(1-eps)) + p_n * log(1-eps); with epsilon = 0 a
    contradicted particle gets -inf (to be handled by the caller as a
    zero weight), a consistent one gets 0.
    """
    if not 0.0 <= epsilon < EPSILON_UPPER:
        raise ValueError(f"epsilon must lie in [0, {EPSILON_UPPER})")
    if epsilon == 0.0:
        return 0.0 if n_mismatch == 0 else -math.inf
    return n_mismatch * math.log(epsilon / (1.0 - epsilon)) + n_pairs * math.log(1.0 - epsilon)


def log_prior_alpha(alpha, priors, include_constant=False):
    """Gamma log prior density of one dispersion, up to a constant.

    The additive constant gamma*log(lambda) - log Gamma(gamma) cancels
    in every Metropolis-Hastings ratio and is omitted unless requested.
    """
    if alpha < 0:
        return -math.inf
    if alpha == 0.0:
        if priors.gamma_shape > 1:
            return -math.inf
        if priors.gamma_shape == 1:
            out = 0.0
        else:
            return math.inf
    else:
        out = (priors.gamma_shape - 1.0) * math.log(alpha) - priors.gamma_rate * alpha
    if include_constant:
        out += priors.gamma_shape * math.log(priors.gamma_rate) - gammaln(priors.gamma_shape)
    return out


def sample_truncated_beta(kappa1, kappa2, rng, upper=EPSILON_UPPER, max_tries=256):
    """Beta(kappa1, kappa2) truncated to [0, upper).

    Rejection from the untruncated Beta, with an inverse-CDF bisection
    fallback for heavily right-shifted shapes where rejection would stall.
    """
    for _ in range(max_tries):
        x = rng.beta(kappa1, kappa2)
        if x < upper:
            return float(x)
    target = rng.uniform(0.0, betainc(kappa1, kappa2, upper))
    lo, hi = 0.0, upper
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if betainc(kappa1, kappa2, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sample_prior(priors, m, rng, noisy=False):
    """Draw StaticParams from the prior."""
    C = priors.n_clusters
    alpha = rng.gamma(priors.gamma_shape, 1.0 / priors.gamma_rate, size=C)
    rho = np.stack([rng.permutation(m) + 1 for _ in range(C)]).astype(np.int64)
    tau = rng.dirichlet(np.full(C, priors.dirichlet_psi)) if C > 1 else np.ones(1)
    eps = sample_truncated_beta(priors.beta_kappa1, priors.beta_kappa2, rng) if noisy else 0.0
    return StaticParams(alpha=alpha, rho=rho, tau=tau, epsilon=eps)


def complete_data_log_increment(batch, params, pf):
    """Exact log-likelihood increment for a batch of complete rankings.

    This is the analytic form of the incremental likelihood when every
    constraint set is a singleton; the engine pins the inner filter
    count to one in this mode.
    """
    rows = []
    for obs in batch.observations:
        if obs.kind != "complete":
            raise ValueError(f"user {obs.user}: not a complete ranking")
        rows.append(obs.ranking)
    return float(log_mixture_density(np.stack(rows), params, pf).sum())
