"""Backend selection for the per-cell kernels.

``ELASTOWAVE_NUMBA=0`` forces the pure-numpy path. ``ELASTOWAVE_THREADS``
caps numba's thread pool.
"""

from __future__ import annotations

import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False


def numba_enabled() -> bool:
    return HAS_NUMBA and os.environ.get("ELASTOWAVE_NUMBA", "1") != "0"


def set_threads(n: int | None = None, deterministic: bool = False) -> int:
    """Apply the thread cap; returns the number of threads in effect."""
    if not HAS_NUMBA:
        return 1
    if deterministic:
        n = 1
    elif n is None:
        env = os.environ.get("ELASTOWAVE_THREADS")
        n = int(env) if env else numba.config.NUMBA_NUM_THREADS
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity otherwise."""
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


prange = numba.prange if HAS_NUMBA else range
