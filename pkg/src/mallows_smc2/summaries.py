"""Posterior summaries of weighted parameter clouds.

Mixture components are reported sorted by dispersion within each
particle, which makes the summaries invariant to label switching;
dedicated relabeling (e.g. Stephens' algorithm) can be applied
downstream using the per-particle cluster-probability dump.
"""

import numpy as np

from . import kernels
from .rankings import Distance, as_ranking


def _weights(cloud):
    return np.exp(cloud["log_weight"])


def sorted_components(cloud):
    """alpha, rho, tau with clusters ordered by alpha inside each particle."""
    alpha = cloud["alpha"]
    order = np.argsort(alpha, axis=1, kind="stable")
    idx = np.arange(alpha.shape[0])[:, None]
    return alpha[idx, order], cloud["rho"][idx, order], cloud["tau"][idx, order]


def weighted_moments(x, w):
    """Weighted mean and standard deviation along axis 0."""
    mean = np.tensordot(w, x, axes=(0, 0))
    var = np.tensordot(w, (x - mean) ** 2, axes=(0, 0))
    return mean, np.sqrt(np.maximum(var, 0.0))


def rho_pair_probabilities(cloud, pairs, component=0):
    """P(rho_i < rho_j) for the requested 0-based item pairs."""
    w = _weights(cloud)
    _, rho, _ = sorted_components(cloud)
    out = {}
    for i, j in pairs:
        p = float(w[rho[:, component, i] < rho[:, component, j]].sum())
        out[f"{i + 1}<{j + 1}"] = min(max(p, 0.0), 1.0)
    return out


def rho_marginal_matrix(cloud, component=0):
    """Entry (i, k): posterior probability that item i has rank k+1."""
    w = _weights(cloud)
    _, rho, _ = sorted_components(cloud)
    m = cloud["m"]
    out = np.zeros((m, m))
    for i in range(m):
        np.add.at(out[i], rho[:, component, i] - 1, w)
    return out


def map_ranking(cloud, component=0):
    """Highest-posterior-weight modal ranking in the cloud."""
    w = _weights(cloud)
    _, rho, _ = sorted_components(cloud)
    acc = {}
    for row, wt in zip(rho[:, component], w):
        key = row.tobytes()
        acc[key] = acc.get(key, 0.0) + wt
    best = max(acc, key=acc.get)
    return np.frombuffer(best, dtype=rho.dtype).astype(np.int64), float(acc[best])


def mean_distance_to(cloud, reference, component=0):
    """Posterior mean distance from the modal ranking to a reference."""
    reference = as_ranking(reference)
    w = _weights(cloud)
    _, rho, _ = sorted_components(cloud)
    kind = Distance.from_name(cloud["distance"]) if isinstance(cloud["distance"], str) else cloud["distance"]
    d = kernels.dist_to_ref(np.ascontiguousarray(rho[:, component]), reference, int(kind))
    return float(np.dot(w, d))


def summarize_cloud(cloud, pairs=None, reference=None, include_marginals=False):
    """Posterior functionals of a (possibly merged) cloud as one record."""
    w = _weights(cloud)
    alpha, rho, tau = sorted_components(cloud)
    a_mean, a_sd = weighted_moments(alpha, w)
    t_mean, t_sd = weighted_moments(tau, w)
    e_mean, e_sd = weighted_moments(cloud["epsilon"], w)
    C = alpha.shape[1]
    out = {
        "t": int(cloud["t"]),
        "log_ml": float(cloud["log_ml"]),
        "alpha_mean": a_mean.tolist(),
        "alpha_sd": a_sd.tolist(),
        "tau_mean": t_mean.tolist(),
        "tau_sd": t_sd.tolist(),
        "epsilon_mean": float(e_mean),
        "epsilon_sd": float(e_sd),
        "ess": float(1.0 / np.sum(w * w)),
    }
    if pairs:
        out["rho_pair_probs"] = rho_pair_probabilities(cloud, pairs)
    if reference is not None:
        out["mean_distance_to_reference"] = [
            mean_distance_to(cloud, reference, component=c) for c in range(C)
        ]
    ranking, prob = map_ranking(cloud)
    out["rho_map"] = ranking.tolist()
    out["rho_map_prob"] = prob
    if include_marginals:
        out["rho_marginals"] = [rho_marginal_matrix(cloud, c).tolist() for c in range(C)]
    return out


def validate_record(record):
    """PosteriorRecord invariants: probabilities in [0, 1], normalized
    distributions. Raises on violation; used by tests and the writer."""
    for key, val in record.get("rho_pair_probs", {}).items():
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"pair probability {key} out of range: {val}")
    for marg in record.get("rho_marginals", []):
        marg = np.asarray(marg)
        if np.any(marg < -1e-12) or np.any(np.abs(marg.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("rho marginal rows must be distributions")
    for t in record.get("tau_mean", []):
        if not -1e-12 <= t <= 1 + 1e-12:
            raise ValueError("tau mean out of range")
    return record
