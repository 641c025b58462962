"""Inner particle filters over latent rankings and cluster labels.

A filter holds S particles, each carrying one latent ranking (and one
cluster label) per user seen so far. Each timepoint resamples the
particles by the previous weights, proposes latents for the new users,
and records the unnormalized log-weights; the running sum of
log(mean weight) is an unbiased estimator (on the exp scale) of the
marginal likelihood p(y | theta). A conditional variant keeps one
retained trajectory fixed in its ancestral slots, which is the kernel
the rejuvenation sweep needs.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import log_coefficients
from .proposals import (
    free_pairs_draws,
    preference_draws,
    pseudolikelihood_draws,
    pseudolikelihood_log_prob,
    uniform_partial_draws,
)

RESAMPLERS = ("multinomial", "residual", "stratified", "systematic")


class DataInconsistencyError(RuntimeError):
    """Every particle got zero weight: the data contradict the model setup."""

    def __init__(self, t, users):
        self.t = t
        self.users = list(users)
        super().__init__(
            f"all particle weights vanished at timepoint {t} (users {self.users}); "
            "with epsilon = 0 this means the observations are mutually inconsistent"
        )


def resample_indices(weights, kind, rng):
    """Ancestor indices for one resampling step.

    Unbiased for every scheme: the expected number of copies of index s
    is S * W_s. Zero-weight particles are never selected unless all
    weights vanish, which is an error raised by the caller.
    """
    W = np.asarray(weights, dtype=np.float64)
    if np.any(W < 0) or not np.isfinite(W.sum()) or W.sum() <= 0:
        raise ValueError("weights must be non-negative and normalizable")
    W = W / W.sum()
    S = W.shape[0]
    if kind == "multinomial":
        return kernels.resample_multinomial(W, rng.random(S))
    if kind == "stratified":
        return kernels.resample_stratified(W, rng.random(S))
    if kind == "systematic":
        return kernels.resample_systematic(W, float(rng.random()))
    if kind == "residual":
        return kernels.resample_residual(W, rng.random(S))
    raise ValueError(f"unknown resampler {kind!r}; pick one of {RESAMPLERS}")


def ess(weights):
    """Effective sample size 1 / sum(W^2) of normalized weights."""
    W = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(W * W))


@dataclass
class PreparedUser:
    """An observation bundled with its constraint set, ready to filter."""

    obs: object
    cs: object

    @property
    def user(self):
        return self.obs.user


@dataclass
class RetainedTrajectory:
    """Per-user latents and slot lineage of one retained particle."""

    rankings: np.ndarray   # (N, m)
    labels: np.ndarray     # (N,)
    orders: np.ndarray     # (N, m) visiting orders, or None
    lineage: np.ndarray    # (T,) slot index per timepoint


class FilterState:
    """S latent-variable particles with ancestry and a weight ledger."""

    def __init__(self, S, m, track_orders=False):
        self.S = S
        self.m = m
        self.track_orders = track_orders
        cap = 4
        # latent storage is bandwidth-bound (gathered every timepoint), so
        # use the narrowest integer type that holds a rank value
        idt = np.int8 if m < 128 else np.int16
        self.rankings = np.zeros((S, cap, m), dtype=idt)
        self.labels = np.zeros((S, cap), dtype=np.int8)
        self.orders = np.full((S, cap, m), -1, dtype=idt) if track_orders else None
        self.n_users = 0
        self.users = []
        self.log_w = []            # per-timepoint (S,) unnormalized log-weights
        self.lineage = np.zeros((S, 0), dtype=np.int32)
        self.W = np.full(S, 1.0 / S)
        self.log_zhat = 0.0

    @property
    def t(self):
        return len(self.log_w)

    def _ensure_capacity(self, extra):
        need = self.n_users + extra
        cap = self.rankings.shape[1]
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        grow = lambda a, fill: np.concatenate(
            [a, np.full((self.S, cap - a.shape[1]) + a.shape[2:], fill, dtype=a.dtype)], axis=1
        )
        self.rankings = grow(self.rankings, 0)
        self.labels = grow(self.labels, 0)
        if self.track_orders:
            self.orders = grow(self.orders, -1)

    def gather(self, anc):
        n = self.n_users
        self.rankings[:, :n] = self.rankings[anc, :n]
        self.labels[:, :n] = self.labels[anc, :n]
        if self.track_orders:
            self.orders[:, :n] = self.orders[anc, :n]
        self.lineage = self.lineage[anc]

    def clone(self):
        out = FilterState.__new__(FilterState)
        out.S = self.S
        out.m = self.m
        out.track_orders = self.track_orders
        out.rankings = self.rankings.copy()
        out.labels = self.labels.copy()
        out.orders = None if self.orders is None else self.orders.copy()
        out.n_users = self.n_users
        out.users = list(self.users)
        out.log_w = [w.copy() for w in self.log_w]
        out.lineage = self.lineage.copy()
        out.W = self.W.copy()
        out.log_zhat = self.log_zhat
        return out

    def select(self, idx):
        """A new filter whose particles (full history) are self's at idx."""
        out = FilterState.__new__(FilterState)
        out.S = len(idx)
        out.m = self.m
        out.track_orders = self.track_orders
        out.rankings = self.rankings[idx].copy()
        out.labels = self.labels[idx].copy()
        out.orders = None if self.orders is None else self.orders[idx].copy()
        out.n_users = self.n_users
        out.users = list(self.users)
        out.log_w = [w[idx].copy() for w in self.log_w]
        out.lineage = self.lineage[idx].copy()
        last = out.log_w[-1]
        lse = kernels.logsumexp_1d(last)
        out.W = np.exp(last - lse)
        out.log_zhat = sum(
            kernels.logsumexp_1d(w) - math.log(out.S) for w in out.log_w
        )
        return out

    def retained(self, k):
        n = self.n_users
        return RetainedTrajectory(
            rankings=self.rankings[k, :n].copy(),
            labels=self.labels[k, :n].copy(),
            orders=self.orders[k, :n].copy() if self.track_orders else None,
            lineage=self.lineage[k].copy(),
        )


def _draw_latent_rankings(pu, params, cfg, rng, S):
    """Proposal draws for one user: (rows, logq array, orders or None)."""
    cs = pu.cs
    if cs.mode == "complete":
        rows = np.tile(cs.ranking, (S, 1))
        return rows, np.zeros(S), None
    if cs.mode == "partial":
        if cfg.proposal == "pseudolikelihood":
            rows, logq, orders = pseudolikelihood_draws(
                cs.fixed, float(params.alpha[0]), params.rho[0], cfg.aux_distance,
                rng, S, free_items=cs.free_items,
            )
            return rows, logq, orders
        rows, logq = uniform_partial_draws(
            cs.fixed, rng, S, free_items=cs.free_items, free_ranks=cs.free_ranks
        )
        return rows, np.full(S, logq), None
    if cs.mode == "consistent_pairs":
        rows, logq = preference_draws(cs.ordering_set, cs.m, rng, S)
        return rows, np.full(S, logq), None
    rows, logq = free_pairs_draws(cs.m, rng, S)
    return rows, np.full(S, logq), None


def _sample_labels(D, params, log_coef, rng):
    if params.n_clusters == 1:
        return np.zeros(D.shape[0], dtype=np.int64)
    logp = kernels.cluster_log_probs(D, params.alpha, log_coef)
    cum = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(D.shape[0])
    return (cum < u[:, None] * cum[:, -1:]).sum(axis=1).astype(np.int64)


def pf_step(fs, users, params, pf, cfg, rng, retained=None, log_coef=None):
    """One timepoint of the (conditional) particle filter.

    `retained` is None for the unconditional filter; otherwise the
    retained trajectory whose lineage slot at this timepoint keeps its
    stored latents and is never resampled away. `log_coef` caches
    log(tau_c) - log Z(alpha_c), which is constant while params are.
    """
    S = fs.S
    t_index = fs.t
    plant = retained.lineage[t_index] if retained is not None else None
    if t_index > 0:
        if plant is None:
            anc = resample_indices(fs.W, cfg.resampler, rng)
        else:
            # conditioning requires iid categorical ancestors for the free
            # slots; low-variance schemes are not valid conditional kernels
            anc = resample_indices(fs.W, "multinomial", rng)
            anc[plant] = retained.lineage[t_index - 1]
        fs.gather(anc)
    if log_coef is None:
        log_coef = log_coefficients(params, pf)
    logw = np.zeros(S)
    fs._ensure_capacity(len(users))
    for pu in users:
        col = fs.n_users
        rows, logq, orders = _draw_latent_rankings(pu, params, cfg, rng, S)
        if plant is not None:
            rows[plant] = retained.rankings[col]
            if orders is not None:
                orders[plant] = retained.orders[col]
                logq[plant] = pseudolikelihood_log_prob(
                    retained.rankings[col],
                    retained.orders[col][retained.orders[col] >= 0],
                    pu.cs.fixed,
                    float(params.alpha[0]),
                    params.rho[0],
                    cfg.aux_distance,
                )
        D = np.empty((S, params.n_clusters))
        for c in range(params.n_clusters):
            D[:, c] = kernels.dist_to_ref(rows, params.rho[c], int(pf.kind))
        logw += kernels.mix_log_weights(D, params.alpha, log_coef) - logq
        if pu.obs.kind == "pairs":
            mis = (rows[:, pu.obs.pairs[:, 0]] > rows[:, pu.obs.pairs[:, 1]]).sum(axis=1)
            if params.epsilon == 0.0:
                logw[mis > 0] = -np.inf
            else:
                e = params.epsilon
                logw += mis * math.log(e / (1 - e)) + pu.obs.n_pairs * math.log(1 - e)
        labels = _sample_labels(D, params, log_coef, rng)
        if plant is not None:
            labels[plant] = retained.labels[col]
        fs.rankings[:, col] = rows
        fs.labels[:, col] = labels
        if fs.track_orders and orders is not None:
            fs.orders[:, col, : orders.shape[1]] = orders
        fs.n_users += 1
        fs.users.append(pu.user)
    lse = kernels.logsumexp_1d(logw)
    if not np.isfinite(lse):
        raise DataInconsistencyError(t_index + 1, [pu.user for pu in users])
    fs.W = np.exp(logw - lse)
    fs.log_w.append(logw)
    fs.lineage = np.concatenate(
        [fs.lineage, np.arange(S, dtype=np.int32)[:, None]], axis=1
    )
    fs.log_zhat += lse - math.log(S)
    return float(lse - math.log(S))


def run_filter(params, history, S, pf, cfg, rng, retained=None):
    """Run a fresh (conditional) filter over the full batch history."""
    track = cfg.proposal == "pseudolikelihood"
    fs = FilterState(S, pf.m, track_orders=track)
    log_coef = log_coefficients(params, pf)
    for users in history:
        pf_step(fs, users, params, pf, cfg, rng, retained=retained, log_coef=log_coef)
    return fs


def zhat(fs):
    """Log of the unbiased marginal-likelihood estimator of the filter."""
    return fs.log_zhat
