"""Data ingestion, batch scheduling, and the streaming run driver.

Two input formats are supported natively:

* rankings: header ``user,<item columns...>[,timepoint]``, one row per
  user, cells holding ranks (empty = unobserved);
* preferences: header ``user,preferred_item,other_item[,timepoint]``,
  one row per stated pairwise preference.

A converter normalizes PrefLib-style order profiles (strict or with
ties) into the preference format; tied items contribute no pair.

Runs write one line-delimited JSON record per timepoint followed by a
final summary record, so long runs stream and a crash loses only the
tail.
"""

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import Batch, Observation, Priors
from .proposals import transitive_closure
from .rankings import Distance
from .smc2 import MODES, Smc2Config, combine_replicates, make_engine
from .summaries import (
    sorted_components,
    summarize_cloud,
    validate_record,
    weighted_moments,
)

WORKERS_ENV = "MALLOWS_SMC2_WORKERS"


class IngestError(ValueError):
    pass


def _read_rows(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise IngestError(f"{path}: empty input")
    return rows


def parse_rankings(path):
    """Parse a rankings file into observations.

    Returns (observations, timepoints, m); `timepoints` is None when the
    file has no timepoint column, otherwise a per-user list of ints.
    """
    rows = _read_rows(path)
    header = [h.strip().lower() for h in rows[0]]
    if not header or header[0] != "user":
        raise IngestError(f"{path}: first header column must be 'user'")
    has_t = header[-1] == "timepoint"
    m = len(header) - 1 - (1 if has_t else 0)
    if m < 1:
        raise IngestError(f"{path}: no item columns")
    observations, timepoints, seen = [], [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise IngestError(f"{path}:{lineno}: expected {len(header)} cells")
        user = int(row[0])
        if user in seen:
            raise IngestError(f"{path}:{lineno}: duplicate user id {user}")
        seen.add(user)
        cells = row[1 : 1 + m]
        fixed = np.zeros(m, dtype=np.int64)
        for i, cell in enumerate(cells):
            cell = cell.strip()
            if cell:
                rank = int(cell)
                if not 1 <= rank <= m:
                    raise IngestError(f"{path}:{lineno}: rank {rank} out of range 1..{m}")
                fixed[i] = rank
        got = fixed[fixed > 0]
        if np.unique(got).size != got.size:
            raise IngestError(f"{path}:{lineno}: duplicate rank for user {user}")
        observations.append(Observation.partial(user, fixed))
        if has_t:
            timepoints.append(int(row[-1]))
    return observations, (timepoints if has_t else None), m


def parse_preferences(path, m=None, noisy=False):
    """Parse a pairwise-preference file into observations.

    Item labels may be arbitrary strings; integer labels are taken as
    1-based item indices. Cyclic preference sets are rejected unless
    `noisy` is set (the Bernoulli error model then applies).
    """
    rows = _read_rows(path)
    start = 0
    if rows[0][0].strip().lower() == "user":
        start = 1
    body = rows[start:]
    labels = {}
    all_int = all(
        cell.strip().lstrip("-").isdigit() for row in body for cell in row[1:3]
    )
    by_user, order, user_t = {}, [], {}
    for lineno, row in enumerate(body, start=start + 1):
        if len(row) < 3:
            raise IngestError(f"{path}:{lineno}: expected user,preferred,other")
        user = int(row[0])
        a, b = row[1].strip(), row[2].strip()
        if a == b:
            raise IngestError(f"{path}:{lineno}: self-preference for user {user}")
        if all_int:
            ia, ib = int(a) - 1, int(b) - 1
        else:
            ia = labels.setdefault(a, len(labels))
            ib = labels.setdefault(b, len(labels))
        if user not in by_user:
            by_user[user] = []
            order.append(user)
        by_user[user].append((ia, ib))
        if len(row) > 3 and row[3].strip():
            t = int(row[3])
            if user_t.setdefault(user, t) != t:
                raise IngestError(f"{path}:{lineno}: user {user} spans timepoints")
    if all_int:
        max_idx = max(i for ps in by_user.values() for p in ps for i in p)
        inferred = max_idx + 1
    else:
        inferred = len(labels)
    if m is None:
        m = inferred
    elif m < inferred:
        raise IngestError(f"{path}: items={m} but data references {inferred} items")
    observations, cyclic_users = [], []
    for user in order:
        pairs = np.array(by_user[user], dtype=np.int64)
        if np.any(pairs >= m):
            raise IngestError(f"{path}: user {user} references item beyond m={m}")
        _, cyclic = transitive_closure(pairs, m)
        if cyclic and not noisy:
            cyclic_users.append(user)
        observations.append(Observation.preferences(user, pairs, noisy=noisy))
    if cyclic_users:
        raise IngestError(
            f"{path}: cyclic preferences for users {cyclic_users}; "
            "use the pairs-noisy mode for mutually inconsistent data"
        )
    timepoints = [user_t[u] for u in order] if user_t else None
    return observations, timepoints, m


def convert_preflib(path, out_path):
    """Normalize a PrefLib-style order profile to the native pair format.

    Handles ``#`` metadata lines and rows like ``5: 3,1,{2,4}`` (an
    optional multiplicity prefix, then an order with optional tie
    groups). Ties imply no pairwise preference between the tied items.
    """
    users = 0
    written = 0
    with open(path, "r", encoding="utf-8") as fh, open(out_path, "w", encoding="utf-8") as out:
        out.write("user,preferred_item,other_item\n")
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#") or line.startswith("%"):
                continue
            mult = 1
            if ":" in line:
                head, line = line.split(":", 1)
                mult = int(head.strip())
            groups = []
            token = ""
            in_tie = False
            current = []
            for ch in line:
                if ch == "{":
                    in_tie = True
                elif ch == "}":
                    if token.strip():
                        current.append(token.strip())
                    token = ""
                    groups.append(current)
                    current = []
                    in_tie = False
                elif ch == ",":
                    if token.strip():
                        if in_tie:
                            current.append(token.strip())
                        else:
                            groups.append([token.strip()])
                    token = ""
                else:
                    token += ch
            if token.strip():
                groups.append([token.strip()])
            if not groups:
                continue
            for _ in range(mult):
                users += 1
                for gi in range(len(groups)):
                    for gj in range(gi + 1, len(groups)):
                        for a in groups[gi]:
                            for b in groups[gj]:
                                out.write(f"{users},{a},{b}\n")
                                written += 1
    return users, written


def schedule_batches(observations, timepoints, schedule):
    """Group observations into per-timepoint batches."""
    if schedule == "one-per-timepoint":
        return [Batch(t + 1, [obs]) for t, obs in enumerate(observations)]
    if schedule == "by-timepoint-column":
        if timepoints is None:
            raise IngestError("schedule by-timepoint-column needs a timepoint column")
        buckets = {}
        for obs, t in zip(observations, timepoints):
            buckets.setdefault(t, []).append(obs)
        return [Batch(i + 1, buckets[t]) for i, t in enumerate(sorted(buckets))]
    if schedule.startswith("size:"):
        size = int(schedule.split(":", 1)[1])
        if size < 1:
            raise IngestError("batch size must be positive")
        return [
            Batch(i + 1, observations[i * size : (i + 1) * size])
            for i in range((len(observations) + size - 1) // size)
        ]
    raise IngestError(f"unknown schedule {schedule!r}")


@dataclass
class RunConfig:
    """Everything `run` needs: engine knobs plus I/O and scheduling."""

    input: str
    mode: str
    out: str
    m: int = None
    n_particles: int = 1024
    n_filters: int = 8
    n_clusters: int = 1
    distance: Distance = Distance.FOOTRULE
    proposal: str = "uniform"
    aux_distance: Distance = Distance.FOOTRULE
    resampler: str = "systematic"
    gamma_shape: float = 1.0
    gamma_rate: float = 0.5
    dirichlet_psi: float = 1.0
    beta_kappa1: float = 1.0
    beta_kappa2: float = 1.0
    ess_threshold: float = None
    acceptance_threshold: float = 0.2
    max_filters: int = 2**14
    max_rejuvenation_iters: int = 10
    unique_fraction: float = 0.5
    pairs_relation: str = "unrelated"
    orderings_cap: int = 10**6
    schedule: str = "one-per-timepoint"
    replicates: int = 1
    workers: int = None
    seed: int = 0
    pairs: list = field(default_factory=list)        # item pairs for P(rho_i < rho_j)
    reference: list = None                           # reference ranking for distances
    cloud_out: str = None
    cluster_probs_out: str = None
    include_marginals: bool = False

    def __post_init__(self):
        self.distance = Distance.coerce(self.distance)
        self.aux_distance = Distance.coerce(self.aux_distance)

    def engine_config(self, seed):
        priors = Priors(
            gamma_shape=self.gamma_shape,
            gamma_rate=self.gamma_rate,
            dirichlet_psi=self.dirichlet_psi,
            beta_kappa1=self.beta_kappa1,
            beta_kappa2=self.beta_kappa2,
            n_clusters=self.n_clusters,
        )
        mode = "partial" if self.mode == "topk" else self.mode
        return Smc2Config(
            n_particles=self.n_particles,
            mode=mode,
            distance=self.distance,
            priors=priors,
            n_filters=self.n_filters,
            proposal=self.proposal,
            aux_distance=self.aux_distance,
            resampler=self.resampler,
            ess_threshold=self.ess_threshold,
            acceptance_threshold=self.acceptance_threshold,
            max_filters=self.max_filters,
            max_rejuvenation_iters=self.max_rejuvenation_iters,
            unique_fraction=self.unique_fraction,
            pairs_relation=self.pairs_relation,
            orderings_cap=self.orderings_cap,
            seed=seed,
        )


def load_observations(config):
    """Parse the input file according to the configured data mode."""
    if config.mode in ("complete", "partial", "topk"):
        observations, timepoints, m = parse_rankings(config.input)
        if config.m is not None and config.m != m:
            raise IngestError(f"configured items={config.m} but file has {m} columns")
        if config.mode == "complete":
            bad = [o.user for o in observations if o.kind != "complete"]
            if bad:
                raise IngestError(f"mode complete but users {bad} have missing ranks")
        if config.mode == "topk":
            for o in observations:
                if o.kind == "complete":
                    continue
                got = np.sort(o.fixed[o.fixed > 0])
                if not np.array_equal(got, np.arange(1, got.size + 1)):
                    raise IngestError(
                        f"mode topk but user {o.user} has non-contiguous ranks {got.tolist()}"
                    )
        return observations, timepoints, m
    if config.mode in ("pairs-consistent", "pairs-noisy"):
        return parse_preferences(config.input, m=config.m, noisy=config.mode == "pairs-noisy")
    raise IngestError(f"unknown mode {config.mode!r}; expected one of {MODES}")


def _replicate_summary(engine, config):
    cloud = engine.cloud()
    w = np.exp(cloud["log_weight"])
    alpha, rho, tau = sorted_components(cloud)
    a1, a2 = weighted_moments(alpha, w)
    t1, t2 = weighted_moments(tau, w)
    e1, e2 = weighted_moments(cloud["epsilon"], w)
    out = {
        "alpha_mean": a1.tolist(),
        "alpha_sd": a2.tolist(),
        "tau_mean": t1.tolist(),
        "tau_sd": t2.tolist(),
        "epsilon_mean": float(e1),
        "epsilon_sd": float(e2),
    }
    if config.pairs:
        from .summaries import rho_pair_probabilities

        out["rho_pair_probs"] = rho_pair_probabilities(cloud, config.pairs)
    if config.reference is not None:
        from .summaries import mean_distance_to

        out["mean_distance_to_reference"] = [
            mean_distance_to(cloud, config.reference, component=c)
            for c in range(alpha.shape[1])
        ]
    return out


def run_replicate(config, m, batches, replicate_index):
    """One full streaming pass; module-level so executors can pickle it."""
    seed_seq = np.random.SeedSequence(config.seed, spawn_key=(replicate_index,))
    rng = np.random.default_rng(seed_seq)
    engine_config = config.engine_config(seed=config.seed)
    engine = make_engine(engine_config, m, rng=rng)
    records = []
    for batch in batches:
        report = engine.assimilate(batch)
        rec = report.as_dict()
        rec.update(_replicate_summary(engine, config))
        records.append(rec)
    cloud = engine.cloud()
    dump = None
    if config.cluster_probs_out:
        dump = engine.cluster_probability_dump()
    return {"records": records, "cloud": cloud, "log_ml": engine.log_ml, "dump": dump}


def _nanmean(values):
    finite = [v for v in values if v == v]
    return float(np.mean(finite)) if finite else math.nan


def _combine_records(per_replicate):
    """Per-timepoint records across replicates, weighted by the running
    marginal-likelihood share of each replicate.

    Means combine linearly; standard deviations combine through second
    moments of the replicate mixture.
    """
    T = len(per_replicate[0]["records"])
    out = []
    for t in range(T):
        recs = [rep["records"][t] for rep in per_replicate]
        log_mls = np.array([r["log_ml"] for r in recs])
        share = np.exp(log_mls - log_mls.max())
        share /= share.sum()
        combined = {
            "type": "timepoint",
            "t": recs[0]["t"],
            "n_users": recs[0]["n_users"],
            "log_ml": float(np.log(np.exp(log_mls - log_mls.max()).mean()) + log_mls.max()),
            "ess": float(np.dot(share, [r["ess"] for r in recs])),
            "resampled": bool(any(r["resampled"] for r in recs)),
            "zeta": _nanmean([r["zeta"] for r in recs]),
            "n_filters": int(max(r["n_filters"] for r in recs)),
        }
        for base in ("alpha", "tau"):
            mean = np.array([r[f"{base}_mean"] for r in recs])
            sd = np.array([r[f"{base}_sd"] for r in recs])
            mu = share @ mean
            second = share @ (sd**2 + mean**2)
            combined[f"{base}_mean"] = mu.tolist()
            combined[f"{base}_sd"] = np.sqrt(np.maximum(second - mu**2, 0)).tolist()
        mean = np.array([r["epsilon_mean"] for r in recs])
        sd = np.array([r["epsilon_sd"] for r in recs])
        mu = float(share @ mean)
        combined["epsilon_mean"] = mu
        combined["epsilon_sd"] = float(
            math.sqrt(max(float(share @ (sd**2 + mean**2)) - mu**2, 0.0))
        )
        if "rho_pair_probs" in recs[0]:
            combined["rho_pair_probs"] = {
                key: min(max(float(share @ [r["rho_pair_probs"][key] for r in recs]), 0.0), 1.0)
                for key in recs[0]["rho_pair_probs"]
            }
        if "mean_distance_to_reference" in recs[0]:
            combined["mean_distance_to_reference"] = (
                share @ np.array([r["mean_distance_to_reference"] for r in recs])
            ).tolist()
        out.append(validate_record(combined))
    return out


def save_cloud(cloud, path):
    np.savez_compressed(
        path,
        alpha=cloud["alpha"],
        rho=cloud["rho"],
        tau=cloud["tau"],
        epsilon=cloud["epsilon"],
        log_weight=cloud["log_weight"],
        log_ml=cloud["log_ml"],
        m=cloud["m"],
        distance=cloud["distance"],
        t=cloud["t"],
    )


def load_cloud(path):
    data = np.load(path, allow_pickle=False)
    return {
        "alpha": data["alpha"],
        "rho": data["rho"],
        "tau": data["tau"],
        "epsilon": data["epsilon"],
        "log_weight": data["log_weight"],
        "log_ml": float(data["log_ml"]),
        "m": int(data["m"]),
        "distance": str(data["distance"]),
        "t": int(data["t"]),
    }


def run(config):
    """Parse, schedule, run replicates, combine, and write records.

    Returns the merged cloud. Deterministic for a fixed (seed,
    replicates) pair regardless of the worker count.
    """
    observations, timepoints, m = load_observations(config)
    if not observations:
        raise IngestError("no observations parsed")
    batches = schedule_batches(observations, timepoints, config.schedule)
    P = config.replicates
    workers = config.workers
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, min(P, os.cpu_count() or 1)))
    workers = max(1, min(workers, P))
    args = [(config, m, batches, p) for p in range(P)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_replicate = list(pool.map(_run_replicate_star, args))
    else:
        per_replicate = [run_replicate(*a) for a in args]
    records = _combine_records(per_replicate)
    merged = combine_replicates(
        [rep["cloud"] for rep in per_replicate],
        [rep["log_ml"] for rep in per_replicate],
    )
    final = summarize_cloud(
        merged,
        pairs=config.pairs or None,
        reference=config.reference,
        include_marginals=config.include_marginals,
    )
    final["type"] = "summary"
    final["replicates"] = P
    with open(config.out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
        fh.write(json.dumps(final) + "\n")
    if config.cloud_out:
        save_cloud(merged, config.cloud_out)
    if config.cluster_probs_out:
        dumps = [rep["dump"] for rep in per_replicate]
        log_mls = np.array([rep["log_ml"] for rep in per_replicate])
        share = np.exp(log_mls - log_mls.max())
        share /= share.sum()
        np.savez_compressed(
            config.cluster_probs_out,
            probs=np.concatenate([d["probs"] for d in dumps]),
            weights=np.concatenate(
                [d["weights"] * s for d, s in zip(dumps, share)]
            ),
            users=np.array(dumps[0]["users"]),
        )
    return merged


def _run_replicate_star(args):
    return run_replicate(*args)


def count_orderings(config_input, m=None, cap=10**6, out_path=None):
    """Per-user linear-extension counts (and timing) for a preference file."""
    from .proposals import build_ordering_set

    observations, _, m = parse_preferences(config_input, m=m, noisy=False)
    rows = []
    for obs in observations:
        t0 = time.perf_counter()
        oset = build_ordering_set(obs.pairs, m, cap=cap, user=obs.user)
        elapsed = (time.perf_counter() - t0) * 1000.0
        rows.append((obs.user, obs.n_pairs, oset.n_orderings, elapsed))
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("user,n_pairs,n_orderings,cpu_ms\n")
            for user, np_, no, ms in rows:
                fh.write(f"{user},{np_},{no},{ms:.3f}\n")
    return rows
