"""Kernel dispatch between numba-jitted and pure-numpy implementations.

The hot inner loops (LSTM recurrences, segment averaging) live in
``phonepool.kernels`` in two variants each: a loop version compiled with
``numba.njit`` and a pure-numpy fallback.  By default the jitted variant is
used whenever numba imports cleanly; setting the environment variable
``PHONEPOOL_NO_NUMBA=1`` forces the numpy path (useful for debugging and for
the benchmark in ``benchmarks/bench_kernels.py``).
"""

import os

NO_NUMBA_ENV = "PHONEPOOL_NO_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def numba_disabled_by_env() -> bool:
    return os.environ.get(NO_NUMBA_ENV, "").strip().lower() in ("1", "true", "yes")


USE_NUMBA = HAVE_NUMBA and not numba_disabled_by_env()


def njit(fn):
    """Compile ``fn`` with numba when the jit path is active, else return it
    unchanged (so the same source doubles as the fallback)."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def jit_compile(fn):
    """Always-jitted variant for functions that keep a separate numpy twin."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return None
