"""Numba switch for the hot kernels.

Set ``FUNCQUANT_DISABLE_NUMBA=1`` in the environment before import to force the
pure-numpy code paths (useful for debugging and for platforms without numba).
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

_FLAG = "FUNCQUANT_DISABLE_NUMBA"


def numba_disabled():
    return os.environ.get(_FLAG, "").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = numba is not None and not numba_disabled()


def njit(func):
    """Compile ``func`` in nopython mode when numba is active, else return it unchanged."""
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    return func
