"""Sequential Bayesian inference for Mallows mixture models.

Streaming posterior updates for rankings and pairwise preferences: an
outer importance-sampling cloud over the static parameters, one latent
particle filter per parameter particle, and hybrid
Metropolis-Hastings/Gibbs rejuvenation. The marginal likelihood is a
byproduct of estimation.
"""

from .cardinality import (
    CardinalityTable,
    PartitionFunction,
    build_cardinality_table,
    load_cardinality_table,
    partition_function,
)
from .filtering import (
    DataInconsistencyError,
    FilterState,
    ess,
    pf_step,
    resample_indices,
    run_filter,
)
from .io import RunConfig, parse_preferences, parse_rankings, run
from .model import (
    Batch,
    Observation,
    Priors,
    StaticParams,
    cluster_probs,
    complete_data_log_increment,
    log_error_likelihood,
    log_mallows_kernel,
    mismatch_count,
    sample_prior,
)
from .proposals import (
    ConstraintSet,
    OrderingSet,
    ProposalDraw,
    constraint_set,
    enumerate_topological_orderings,
    leap_and_shift,
    transitive_closure,
)
from .rankings import Distance, distance, enumerate_permutations, max_distance
from .smc2 import Smc2Config, combine_replicates, make_engine
from .summaries import summarize_cloud

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "CardinalityTable",
    "ConstraintSet",
    "DataInconsistencyError",
    "Distance",
    "FilterState",
    "Observation",
    "OrderingSet",
    "PartitionFunction",
    "Priors",
    "ProposalDraw",
    "RunConfig",
    "Smc2Config",
    "StaticParams",
    "build_cardinality_table",
    "cluster_probs",
    "combine_replicates",
    "complete_data_log_increment",
    "constraint_set",
    "distance",
    "enumerate_permutations",
    "enumerate_topological_orderings",
    "ess",
    "leap_and_shift",
    "load_cardinality_table",
    "log_error_likelihood",
    "log_mallows_kernel",
    "make_engine",
    "max_distance",
    "mismatch_count",
    "parse_preferences",
    "parse_rankings",
    "partition_function",
    "pf_step",
    "resample_indices",
    "run",
    "run_filter",
    "sample_prior",
    "summarize_cloud",
]
