"""Command-line interface.

Subcommands: ``fit`` (streaming run), ``convert`` (PrefLib-style order
profiles to the native pair format), ``orderings`` (linear-extension
counts per user), ``summarize`` (recompute summaries from a saved
cloud). A plain key=value config file can seed any fit flag; explicit
flags win.
"""

import argparse
import json
import sys

from .io import RunConfig, convert_preflib, count_orderings, load_cloud, run
from .rankings import Distance
from .summaries import summarize_cloud


def _parse_pairs(values):
    out = []
    for v in values or []:
        a, b = v.split(",")
        out.append((int(a) - 1, int(b) - 1))
    return out


def _read_config_file(path):
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: expected key = value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _fit_parser(sub):
    p = sub.add_parser("fit", help="run the sequential sampler over a data file")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", required=True,
                   choices=["complete", "partial", "topk", "pairs-consistent", "pairs-noisy"])
    p.add_argument("--out", required=True, help="line-delimited JSON records")
    p.add_argument("--config", help="key = value file with defaults for any flag")
    p.add_argument("--items", type=int, dest="m")
    p.add_argument("--distance", default="footrule",
                   choices=[d.label for d in Distance])
    p.add_argument("--clusters", type=int, dest="n_clusters", default=1)
    p.add_argument("--particles", type=int, dest="n_particles", default=1024)
    p.add_argument("--filters", type=int, dest="n_filters", default=8)
    p.add_argument("--proposal", default="uniform", choices=["uniform", "pseudolikelihood"])
    p.add_argument("--aux-distance", default="footrule", choices=["footrule", "spearman"])
    p.add_argument("--resampler", default="systematic",
                   choices=["multinomial", "residual", "stratified", "systematic"])
    p.add_argument("--gamma-shape", type=float, default=1.0)
    p.add_argument("--gamma-rate", type=float, default=0.5)
    p.add_argument("--dirichlet-psi", type=float, default=1.0)
    p.add_argument("--beta-kappa1", type=float, default=1.0)
    p.add_argument("--beta-kappa2", type=float, default=1.0)
    p.add_argument("--ess-threshold", type=float)
    p.add_argument("--acceptance-threshold", type=float, default=0.2)
    p.add_argument("--max-filters", type=int, default=2**14)
    p.add_argument("--max-rejuvenation-iters", type=int, default=10)
    p.add_argument("--unique-fraction", type=float, default=0.5)
    p.add_argument("--pairs-relation", default="unrelated",
                   choices=["unrelated", "before_rest"])
    p.add_argument("--orderings-cap", type=int, default=10**6)
    p.add_argument("--schedule", default="one-per-timepoint",
                   help="one-per-timepoint | by-timepoint-column | size:<k>")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pair", action="append", dest="pairs", metavar="I,J",
                   help="report P(rho_i < rho_j); 1-based items, repeatable")
    p.add_argument("--reference", help="comma-separated reference ranking")
    p.add_argument("--cloud-out", help="save the merged cloud (npz)")
    p.add_argument("--cluster-probs-out",
                   help="save per-particle cluster probabilities (npz)")
    p.add_argument("--include-marginals", action="store_true")
    return p


def _fit(args):
    overrides = {}
    if args.config:
        overrides = _read_config_file(args.config)
    spec = vars(args).copy()
    for key in ("command", "config"):
        spec.pop(key, None)
    for key, value in overrides.items():
        if key in spec and (spec[key] is None or _is_default(key, spec[key])):
            spec[key] = _coerce(key, value)
    spec["pairs"] = _parse_pairs(spec.get("pairs"))
    if spec.get("reference"):
        spec["reference"] = [int(x) for x in str(spec["reference"]).split(",")]
    config = RunConfig(**spec)
    merged = run(config)
    print(f"wrote {config.out}; log marginal likelihood {merged['log_ml']:.4f}")
    return 0


_BOOL_KEYS = {"include_marginals"}
_INT_KEYS = {
    "m", "n_clusters", "n_particles", "n_filters", "max_filters",
    "max_rejuvenation_iters", "orderings_cap", "replicates", "workers", "seed",
}
_FLOAT_KEYS = {
    "gamma_shape", "gamma_rate", "dirichlet_psi", "beta_kappa1", "beta_kappa2",
    "ess_threshold", "acceptance_threshold", "unique_fraction",
}
_DEFAULTS = {
    "distance": "footrule", "proposal": "uniform", "aux_distance": "footrule",
    "resampler": "systematic", "schedule": "one-per-timepoint",
    "pairs_relation": "unrelated", "n_clusters": 1, "n_particles": 1024,
    "n_filters": 8, "gamma_shape": 1.0, "gamma_rate": 0.5, "dirichlet_psi": 1.0,
    "beta_kappa1": 1.0, "beta_kappa2": 1.0, "acceptance_threshold": 0.2,
    "max_filters": 2**14, "max_rejuvenation_iters": 10, "unique_fraction": 0.5,
    "orderings_cap": 10**6, "replicates": 1, "seed": 0,
    "include_marginals": False,
}


def _is_default(key, value):
    return key in _DEFAULTS and _DEFAULTS[key] == value


def _coerce(key, value):
    if key in _BOOL_KEYS:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mallows-smc2",
        description="Sequential Bayesian inference for Mallows mixture models",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _fit_parser(sub)

    p = sub.add_parser("convert", help="PrefLib-style order profile -> pair format")
    p.add_argument("--preflib", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("orderings", help="count linear extensions per user")
    p.add_argument("--input", required=True)
    p.add_argument("--items", type=int, dest="m")
    p.add_argument("--cap", type=int, default=10**6)
    p.add_argument("--out")

    p = sub.add_parser("summarize", help="recompute summaries from a saved cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--out")
    p.add_argument("--pair", action="append", dest="pairs", metavar="I,J")
    p.add_argument("--reference")
    p.add_argument("--include-marginals", action="store_true")

    args = parser.parse_args(argv)
    if args.command == "fit":
        return _fit(args)
    if args.command == "convert":
        users, pairs = convert_preflib(args.preflib, args.out)
        print(f"wrote {args.out}: {users} users, {pairs} pairs")
        return 0
    if args.command == "orderings":
        rows = count_orderings(args.input, m=args.m, cap=args.cap, out_path=args.out)
        for user, n_pairs, n_ord, ms in rows:
            print(f"user {user}: {n_pairs} pairs, {n_ord} orderings, {ms:.2f} ms")
        return 0
    if args.command == "summarize":
        cloud = load_cloud(args.cloud)
        reference = [int(x) for x in args.reference.split(",")] if args.reference else None
        record = summarize_cloud(
            cloud,
            pairs=_parse_pairs(args.pairs) or None,
            reference=reference,
            include_marginals=args.include_marginals,
        )
        text = json.dumps(record, indent=2)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        else:
            print(text)
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
