"""The outer sequential sampler over static parameters.

R parameter particles carry importance weights omega and, in the
general case, one inner particle filter each. A batch of new users is
assimilated by advancing every inner filter one step; the filter's mean
incremental weight estimates p(y_t | y_{1:t-1}, theta) and multiplies
omega. When the effective sample size of the omega-cloud drops below a
threshold the cloud is resampled and rejuvenated with a hybrid kernel:
Metropolis-Hastings on (alpha, rho) using fresh-filter marginal
likelihood estimates, conjugate Gibbs draws for tau and epsilon, and a
conditional filter pass that refreshes the retained trajectory.

Complete rankings admit an exact likelihood increment, so that mode
runs a vectorized single-filter engine: no inner Monte Carlo, no filter
doubling, and cluster labels refreshed by exact conditional draws.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .cardinality import partition_function
from .filtering import (
    FilterState,
    ess,
    pf_step,
    resample_indices,
    run_filter,
)
from .model import (
    Priors,
    StaticParams,
    log_coefficients,
    sample_prior,
    sample_truncated_beta,
)
from .proposals import DEFAULT_ORDERINGS_CAP, constraint_set, leap_and_shift
from .filtering import PreparedUser
from .rankings import Distance

logger = logging.getLogger(__name__)

MODES = ("complete", "partial", "topk", "pairs-consistent", "pairs-noisy")
ALPHA_PROPOSAL_VAR_FLOOR = 1e-4


@dataclass
class Smc2Config:
    """Run-level knobs; defaults follow the usual guidance (ESS threshold
    R/2, doubling threshold 0.2)."""

    n_particles: int
    mode: str
    distance: Distance = Distance.FOOTRULE
    priors: Priors = field(default_factory=Priors)
    n_filters: int = 8
    proposal: str = "uniform"           # uniform | pseudolikelihood (partial data)
    aux_distance: Distance = Distance.FOOTRULE
    resampler: str = "systematic"
    ess_threshold: float = None         # defaults to R / 2
    acceptance_threshold: float = 0.2   # doubling trigger B
    max_filters: int = 2**14
    max_rejuvenation_iters: int = 10
    unique_fraction: float = 0.5
    pairs_relation: str = "unrelated"
    orderings_cap: int = DEFAULT_ORDERINGS_CAP
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.n_particles < 2:
            raise ValueError("need at least two parameter particles")
        if self.n_filters < 1:
            raise ValueError("need at least one inner filter")
        self.distance = Distance.coerce(self.distance)
        self.aux_distance = Distance.coerce(self.aux_distance)
        if self.ess_threshold is None:
            self.ess_threshold = self.n_particles / 2
        if not 0 < self.ess_threshold <= self.n_particles:
            raise ValueError("ess_threshold must lie in (0, R]")
        if not 0 <= self.acceptance_threshold <= 1:
            raise ValueError("acceptance_threshold must lie in [0, 1]")
        if self.proposal not in ("uniform", "pseudolikelihood"):
            raise ValueError("proposal must be uniform or pseudolikelihood")
        if self.proposal == "pseudolikelihood":
            if self.priors.n_clusters != 1:
                raise ValueError("the pseudolikelihood proposal requires one cluster")
            if self.aux_distance not in (Distance.FOOTRULE, Distance.SPEARMAN):
                raise ValueError("aux_distance must be footrule or spearman")

    @property
    def noisy(self):
        return self.mode == "pairs-noisy"


@dataclass
class StepReport:
    """Per-timepoint diagnostics record."""

    t: int
    n_users: int
    ess: float
    resampled: bool
    zeta: float
    n_filters: int
    log_ml_increment: float
    log_ml: float

    def as_dict(self):
        return {
            "t": self.t,
            "n_users": self.n_users,
            "ess": self.ess,
            "resampled": self.resampled,
            "zeta": self.zeta,
            "n_filters": self.n_filters,
            "log_ml_increment": self.log_ml_increment,
            "log_ml": self.log_ml,
        }


def prepare_batch(batch, m, config):
    """Attach constraint sets (with cached ordering enumerations) to a batch."""
    return [
        PreparedUser(obs, constraint_set(
            obs, m, pairs_relation=config.pairs_relation, cap=config.orderings_cap
        ))
        for obs in batch.observations
    ]


def _normalized_log(log_w):
    lse = kernels.logsumexp_1d(log_w)
    return log_w - lse


class _EngineBase:
    """Shared omega bookkeeping for both engine variants."""

    def __init__(self, config, m, rng):
        self.config = config
        self.m = m
        self.rng = rng
        self.pf = partition_function(m, config.distance)
        self.t = 0
        self.n_users = 0
        self.log_ml = 0.0
        self.log_ml_increments = []
        self.diagnostics = []
        self.seen_users = set()
        self.log_omega = np.zeros(config.n_particles)
        self._doubling_warned = False

    @property
    def n_particles(self):
        return self.config.n_particles

    def normalized_weights(self):
        return np.exp(_normalized_log(self.log_omega))

    def assimilate(self, batch):
        """Advance one timepoint; returns the StepReport."""
        if batch.t != self.t + 1:
            raise ValueError(f"expected timepoint {self.t + 1}, got batch {batch.t}")
        dup = [o.user for o in batch.observations if o.user in self.seen_users]
        if dup:
            raise ValueError(f"users re-entering the pool: {dup}")
        users = prepare_batch(batch, self.m, self.config)
        log_p_hat = self._advance_filters(users)
        prev = _normalized_log(self.log_omega)
        incr = kernels.logsumexp_1d(prev + log_p_hat)
        self.log_ml += incr
        self.log_ml_increments.append(incr)
        self.log_omega = self.log_omega + log_p_hat
        omega = self.normalized_weights()
        cur_ess = ess(omega)
        self.t += 1
        self.n_users += len(users)
        self.seen_users.update(o.user for o in batch.observations)
        resampled = cur_ess < self.config.ess_threshold
        zeta = math.nan
        if resampled:
            idx = resample_indices(omega, self.config.resampler, self.rng)
            self._select(idx)
            self.log_omega = np.zeros(self.n_particles)
            zeta = self._rejuvenate()
            if zeta < self.config.acceptance_threshold:
                self._double_filters()
        report = StepReport(
            t=self.t,
            n_users=self.n_users,
            ess=cur_ess,
            resampled=resampled,
            zeta=zeta,
            n_filters=self._filter_count(),
            log_ml_increment=incr,
            log_ml=self.log_ml,
        )
        self.diagnostics.append(report)
        return report

    def cloud(self):
        """Snapshot of the parameter cloud for summaries and persistence."""
        alpha, rho, tau, eps = self._param_arrays()
        return {
            "alpha": alpha,
            "rho": rho,
            "tau": tau,
            "epsilon": eps,
            "log_weight": _normalized_log(self.log_omega.copy()),
            "log_ml": self.log_ml,
            "m": self.m,
            "distance": self.config.distance.label,
            "t": self.t,
        }

    # hooks -------------------------------------------------------------
    def _advance_filters(self, users):
        raise NotImplementedError

    def _select(self, idx):
        raise NotImplementedError

    def _rejuvenate(self):
        raise NotImplementedError

    def _double_filters(self):
        pass

    def _filter_count(self):
        raise NotImplementedError

    def _param_arrays(self):
        raise NotImplementedError


class _ThetaParticle:
    __slots__ = ("params", "filter", "k", "log_coef")

    def __init__(self, params, filter_state, log_coef=None):
        self.params = params
        self.filter = filter_state
        self.k = 0
        self.log_coef = log_coef

    def clone(self):
        out = _ThetaParticle(
            StaticParams(
                alpha=self.params.alpha.copy(),
                rho=self.params.rho.copy(),
                tau=self.params.tau.copy(),
                epsilon=self.params.epsilon,
            ),
            self.filter.clone(),
            self.log_coef,
        )
        out.k = self.k
        return out


class GeneralEngine(_EngineBase):
    """Nested engine: every parameter particle owns an inner filter."""

    def __init__(self, config, m, rng):
        super().__init__(config, m, rng)
        track = config.proposal == "pseudolikelihood"
        self.particles = []
        for _ in range(config.n_particles):
            params = sample_prior(config.priors, m, rng, noisy=config.noisy)
            self.particles.append(
                _ThetaParticle(
                    params,
                    FilterState(config.n_filters, m, track_orders=track),
                    log_coefficients(params, self.pf),
                )
            )
        self.n_filters = config.n_filters
        self.history = []

    def _advance_filters(self, users):
        self.history.append(users)
        out = np.empty(len(self.particles))
        for i, p in enumerate(self.particles):
            out[i] = pf_step(
                p.filter, users, p.params, self.pf, self.config, self.rng,
                log_coef=p.log_coef,
            )
        return out

    def _select(self, idx):
        self.particles = [self.particles[i].clone() for i in idx]

    def _filter_count(self):
        return self.n_filters

    def _param_arrays(self):
        alpha = np.stack([p.params.alpha for p in self.particles])
        rho = np.stack([p.params.rho for p in self.particles])
        tau = np.stack([p.params.tau for p in self.particles])
        eps = np.array([p.params.epsilon for p in self.particles])
        return alpha, rho, tau, eps

    # rejuvenation ------------------------------------------------------

    def _rejuvenate(self):
        cfg = self.config
        alphas = np.stack([p.params.alpha for p in self.particles])
        sig = np.sqrt(np.maximum(alphas.var(axis=0), ALPHA_PROPOSAL_VAR_FLOOR))
        for p in self.particles:
            p.k = int(self.rng.choice(p.filter.S, p=p.filter.W))
        accepts = 0
        proposals = 0
        for it in range(cfg.max_rejuvenation_iters):
            for p in self.particles:
                accepts += self._move_particle(p, sig)
                proposals += 1
            if self._unique_fraction() > cfg.unique_fraction:
                break
        return accepts / proposals

    def _move_particle(self, p, sig):
        """One hybrid move: MH on (alpha, rho), Gibbs on (tau, epsilon),
        then a conditional filter pass refreshing the retained index."""
        cfg = self.config
        priors = cfg.priors
        C = priors.n_clusters
        rng = self.rng
        alpha_new = np.exp(np.log(np.maximum(p.params.alpha, 1e-300)) + sig * rng.standard_normal(C))
        rho_new = np.stack([leap_and_shift(p.params.rho[c], rng) for c in range(C)])
        cand = StaticParams(
            alpha=alpha_new, rho=rho_new, tau=p.params.tau.copy(), epsilon=p.params.epsilon
        )
        fs_new = run_filter(cand, self.history, p.filter.S, self.pf, cfg, rng)
        k_new = int(rng.choice(fs_new.S, p=fs_new.W))
        log_acc = fs_new.log_zhat - p.filter.log_zhat
        log_acc += float(
            np.sum(
                priors.gamma_shape * (np.log(alpha_new) - np.log(p.params.alpha))
                - priors.gamma_rate * (alpha_new - p.params.alpha)
            )
        )
        accepted = math.log(rng.random()) < log_acc
        if accepted:
            p.params = cand
            p.filter = fs_new
            p.k = k_new
            p.log_coef = log_coefficients(cand, self.pf)
        n = p.filter.n_users
        if C > 1:
            counts = np.bincount(p.filter.labels[p.k, :n], minlength=C)
            p.params = replace_params(p.params, tau=rng.dirichlet(priors.dirichlet_psi + counts))
            p.log_coef = log_coefficients(p.params, self.pf)
        if cfg.noisy:
            a = 0
            b = 0
            for users in self.history:
                for pu in users:
                    col = p.filter.users.index(pu.user)
                    mis = int(
                        np.sum(
                            p.filter.rankings[p.k, col][pu.obs.pairs[:, 0]]
                            > p.filter.rankings[p.k, col][pu.obs.pairs[:, 1]]
                        )
                    )
                    a += mis
                    b += pu.obs.n_pairs - mis
            eps_new = sample_truncated_beta(
                priors.beta_kappa1 + a, priors.beta_kappa2 + b, rng
            )
            p.params = replace_params(p.params, epsilon=eps_new)
        retained = p.filter.retained(p.k)
        fs_c = run_filter(
            p.params, self.history, p.filter.S, self.pf, cfg, rng, retained=retained
        )
        p.filter = fs_c
        p.k = int(rng.choice(fs_c.S, p=fs_c.W))
        return int(accepted)

    def _unique_fraction(self):
        keys = {
            (p.params.alpha.tobytes(), p.params.rho.tobytes()) for p in self.particles
        }
        return len(keys) / len(self.particles)

    def _double_filters(self):
        cfg = self.config
        new_S = 2 * self.n_filters
        if new_S > cfg.max_filters:
            if not self._doubling_warned:
                warnings.warn(
                    f"filter doubling skipped: {new_S} exceeds cap {cfg.max_filters}",
                    RuntimeWarning,
                )
                self._doubling_warned = True
            return
        for i, p in enumerate(self.particles):
            idx = kernels.resample_multinomial(p.filter.W, self.rng.random(new_S))
            fs = p.filter.select(idx)
            # exchange importance-sampling correction: (S/S~)^t times the
            # ratio of per-timepoint ledger sums, which is exactly the
            # difference of the two filters' running log-Zhat values
            self.log_omega[i] += fs.log_zhat - p.filter.log_zhat
            p.filter = fs
        self.n_filters = new_S
        logger.info("doubled inner filters to S=%d at t=%d", new_S, self.t)

    # prediction --------------------------------------------------------

    def predict_latents(self, user_ids):
        """One latent draw per parameter particle for the requested users,
        weighted by the normalized omega."""
        weights = self.normalized_weights()
        out = []
        for p, w in zip(self.particles, weights):
            s = int(self.rng.choice(p.filter.S, p=p.filter.W))
            cols = [p.filter.users.index(u) for u in user_ids]
            out.append(
                {
                    "weight": float(w),
                    "rankings": p.filter.rankings[s, cols].astype(np.int64),
                    "labels": p.filter.labels[s, cols].astype(np.int64),
                }
            )
        return out

    def cluster_probability_dump(self):
        """Per-particle, per-user cluster probabilities (for downstream
        label-switching post-processing)."""
        weights = self.normalized_weights()
        C = self.config.priors.n_clusters
        R = len(self.particles)
        n = self.n_users
        probs = np.empty((R, n, C))
        for i, p in enumerate(self.particles):
            s = int(self.rng.choice(p.filter.S, p=p.filter.W))
            rows = p.filter.rankings[s, :n].astype(np.int64)
            log_coef = log_coefficients(p.params, self.pf)
            D = np.empty((n, C))
            for c in range(C):
                D[:, c] = kernels.dist_to_ref(rows, p.params.rho[c], int(self.pf.kind))
            probs[i] = np.exp(kernels.cluster_log_probs(D, p.params.alpha, log_coef))
        return {"weights": weights, "probs": probs, "users": list(self.particles[0].filter.users)}


def replace_params(params, **kw):
    return StaticParams(
        alpha=kw.get("alpha", params.alpha),
        rho=kw.get("rho", params.rho),
        tau=kw.get("tau", params.tau),
        epsilon=kw.get("epsilon", params.epsilon),
    )


class CompleteEngine(_EngineBase):
    """Vectorized engine for complete rankings.

    Likelihood increments are exact, so a single latent particle
    suffices; its cluster labels are exact conditional draws, the
    doubling threshold is pinned to zero, and no inner filters run.
    """

    def __init__(self, config, m, rng):
        if config.noisy:
            raise ValueError("complete mode is incompatible with the error model")
        config.acceptance_threshold = 0.0
        config.n_filters = 1
        super().__init__(config, m, rng)
        R = config.n_particles
        C = config.priors.n_clusters
        draws = [sample_prior(config.priors, m, rng) for _ in range(R)]
        self.alpha = np.stack([d.alpha for d in draws])
        self.rho = np.stack([d.rho for d in draws])
        self.tau = np.stack([d.tau for d in draws])
        self.log_z = self.pf.log_z_many(self.alpha.ravel()).reshape(R, C)
        self.Y = np.empty((0, m), dtype=np.int64)
        self.labels = np.empty((R, 0), dtype=np.int64)
        self.log_zhat = np.zeros(R)
        self._user_order = []

    # likelihood sweeps -------------------------------------------------

    def _increments(self, Y, alpha, rho, tau, log_z):
        """Sum over the rows of Y of the exact mixture log-increment, per
        particle: shape (R,)."""
        R, C = alpha.shape
        out = np.zeros(R)
        with np.errstate(divide="ignore"):
            log_tau = np.log(tau)
        for n in range(Y.shape[0]):
            t = np.empty((R, C))
            for c in range(C):
                d = kernels.dist_to_ref(rho[:, c], Y[n], int(self.pf.kind))
                t[:, c] = log_tau[:, c] - log_z[:, c] - alpha[:, c] * d
            hi = t.max(axis=1)
            out += hi + np.log(np.exp(t - hi[:, None]).sum(axis=1))
        return out

    def _cluster_draws(self, Y, rng):
        """Exact conditional cluster labels for the rows of Y, per particle."""
        R, C = self.alpha.shape
        if C == 1:
            return np.zeros((R, Y.shape[0]), dtype=np.int64)
        with np.errstate(divide="ignore"):
            log_tau = np.log(self.tau)
        out = np.empty((R, Y.shape[0]), dtype=np.int64)
        for n in range(Y.shape[0]):
            t = np.empty((R, C))
            for c in range(C):
                d = kernels.dist_to_ref(self.rho[:, c], Y[n], int(self.pf.kind))
                t[:, c] = log_tau[:, c] - self.log_z[:, c] - self.alpha[:, c] * d
            t -= t.max(axis=1, keepdims=True)
            p = np.exp(t)
            cum = np.cumsum(p, axis=1)
            u = rng.random(R) * cum[:, -1]
            out[:, n] = (cum < u[:, None]).sum(axis=1)
        return out

    def _advance_filters(self, users):
        rows = []
        for pu in users:
            if pu.cs.mode != "complete":
                raise ValueError("the complete-mode engine needs complete rankings")
            rows.append(pu.obs.ranking)
        Y_new = np.stack(rows)
        incr = self._increments(Y_new, self.alpha, self.rho, self.tau, self.log_z)
        new_labels = self._cluster_draws(Y_new, self.rng)
        self.Y = np.concatenate([self.Y, Y_new])
        self.labels = np.concatenate([self.labels, new_labels], axis=1)
        self.log_zhat += incr
        return incr

    def _select(self, idx):
        self.alpha = self.alpha[idx].copy()
        self.rho = self.rho[idx].copy()
        self.tau = self.tau[idx].copy()
        self.log_z = self.log_z[idx].copy()
        self.labels = self.labels[idx].copy()
        self.log_zhat = self.log_zhat[idx].copy()

    def _filter_count(self):
        return 1

    def _param_arrays(self):
        R = self.alpha.shape[0]
        return self.alpha, self.rho, self.tau, np.zeros(R)

    def _rejuvenate(self):
        cfg = self.config
        priors = cfg.priors
        rng = self.rng
        R, C = self.alpha.shape
        sig = np.sqrt(np.maximum(self.alpha.var(axis=0), ALPHA_PROPOSAL_VAR_FLOOR))
        accepts = 0
        proposals = 0
        for it in range(cfg.max_rejuvenation_iters):
            alpha_new = self.alpha * np.exp(rng.standard_normal((R, C)) * sig)
            rho_new = np.empty_like(self.rho)
            for r in range(R):
                for c in range(C):
                    rho_new[r, c] = leap_and_shift(self.rho[r, c], rng)
            log_z_new = self.pf.log_z_many(alpha_new.ravel()).reshape(R, C)
            zhat_new = self._increments(self.Y, alpha_new, rho_new, self.tau, log_z_new)
            log_acc = zhat_new - self.log_zhat
            log_acc += (
                priors.gamma_shape * (np.log(alpha_new) - np.log(self.alpha))
                - priors.gamma_rate * (alpha_new - self.alpha)
            ).sum(axis=1)
            take = np.log(rng.random(R)) < log_acc
            accepts += int(take.sum())
            proposals += R
            self.alpha[take] = alpha_new[take]
            self.rho[take] = rho_new[take]
            self.log_z[take] = log_z_new[take]
            self.log_zhat[take] = zhat_new[take]
            if C > 1:
                # exact-z refresh stands in for the conditional filter: the
                # labels' conditional given (ranking, theta) is available in
                # closed form, so Gibbs on tau uses fresh exact draws
                self.labels = self._cluster_draws(self.Y, rng)
                counts = np.stack(
                    [np.bincount(self.labels[r], minlength=C) for r in range(R)]
                )
                g = rng.gamma(priors.dirichlet_psi + counts)
                self.tau = g / g.sum(axis=1, keepdims=True)
                self.labels = self._cluster_draws(self.Y, rng)
                self.log_zhat = self._increments(self.Y, self.alpha, self.rho, self.tau, self.log_z)
            uniq = len({(self.alpha[r].tobytes(), self.rho[r].tobytes()) for r in range(R)})
            if uniq / R > cfg.unique_fraction:
                break
        return accepts / proposals

    def predict_latents(self, user_ids):
        weights = self.normalized_weights()
        users = self.seen_order()
        cols = [users.index(u) for u in user_ids]
        out = []
        for r in range(self.alpha.shape[0]):
            out.append(
                {
                    "weight": float(weights[r]),
                    "rankings": self.Y[cols],
                    "labels": self.labels[r, cols],
                }
            )
        return out

    def seen_order(self):
        return self._user_order

    def assimilate(self, batch):
        report = super().assimilate(batch)
        self._user_order.extend(o.user for o in batch.observations)
        return report

    def cluster_probability_dump(self):
        weights = self.normalized_weights()
        R, C = self.alpha.shape
        n = self.Y.shape[0]
        with np.errstate(divide="ignore"):
            log_tau = np.log(self.tau)
        probs = np.empty((R, n, C))
        for c in range(C):
            for nn in range(n):
                d = kernels.dist_to_ref(self.rho[:, c], self.Y[nn], int(self.pf.kind))
                probs[:, nn, c] = log_tau[:, c] - self.log_z[:, c] - self.alpha[:, c] * d
        hi = probs.max(axis=2, keepdims=True)
        probs = np.exp(probs - hi)
        probs /= probs.sum(axis=2, keepdims=True)
        return {"weights": weights, "probs": probs, "users": list(self._user_order)}


def make_engine(config, m, rng=None):
    """Engine for the configured data mode."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if config.mode == "complete":
        return CompleteEngine(config, m, rng)
    return GeneralEngine(config, m, rng)


def combine_replicates(clouds, log_mls):
    """Merge replicate clouds with weights Omega^{r,p} * ml_p / sum ml.

    Returns the merged cloud plus the combined marginal likelihood,
    which is the plain average of the per-replicate estimates.
    """
    log_mls = np.asarray(log_mls, dtype=np.float64)
    P = log_mls.shape[0]
    if len(clouds) != P:
        raise ValueError("one marginal likelihood per replicate cloud")
    if any(c["m"] != clouds[0]["m"] or c["distance"] != clouds[0]["distance"] for c in clouds):
        raise ValueError("replicate clouds were built under different configurations")
    lse = kernels.logsumexp_1d(log_mls)
    log_shares = log_mls - lse
    merged = {}
    for key in ("alpha", "rho", "tau", "epsilon"):
        merged[key] = np.concatenate([c[key] for c in clouds])
    merged["log_weight"] = np.concatenate(
        [c["log_weight"] + share for c, share in zip(clouds, log_shares)]
    )
    merged["log_weight"] -= kernels.logsumexp_1d(merged["log_weight"])
    merged["m"] = clouds[0]["m"]
    merged["distance"] = clouds[0]["distance"]
    merged["t"] = clouds[0]["t"]
    merged["log_ml"] = float(lse - math.log(P))
    return merged
