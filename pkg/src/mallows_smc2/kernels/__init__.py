"""Numeric hot-path kernels with selectable backend.

Two interchangeable implementations exist: a pure-numpy reference
(`_numpy`) and a numba ``@njit`` version (`_numba`). The active backend
is chosen at import time from the ``MALLOWS_SMC2_BACKEND`` environment
variable:

* ``auto`` (default) - numba when importable, numpy otherwise
* ``numba``          - require numba, fail loudly if missing
* ``numpy``          - force the pure-numpy path

All kernels are deterministic; random numbers are drawn by callers and
passed in as arrays, so results for a fixed seed depend only on the
floating-point behaviour of the selected backend.
"""

import os

from . import _numpy

_CHOICE = os.environ.get("MALLOWS_SMC2_BACKEND", "auto").strip().lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"MALLOWS_SMC2_BACKEND must be auto, numba or numpy, got {_CHOICE!r}"
    )

if _CHOICE == "numpy":
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:
        if _CHOICE == "numba":
            raise
        _impl = _numpy
        BACKEND = "numpy"

dist_to_ref = _impl.dist_to_ref
mix_log_weights = _impl.mix_log_weights
cluster_log_probs = _impl.cluster_log_probs
logsumexp_1d = _impl.logsumexp_1d
resample_multinomial = _impl.resample_multinomial
resample_stratified = _impl.resample_stratified
resample_systematic = _impl.resample_systematic
resample_residual = _impl.resample_residual
enumerate_orderings = _impl.enumerate_orderings

__all__ = [
    "BACKEND",
    "dist_to_ref",
    "mix_log_weights",
    "cluster_log_probs",
    "logsumexp_1d",
    "resample_multinomial",
    "resample_stratified",
    "resample_systematic",
    "resample_residual",
    "enumerate_orderings",
]
