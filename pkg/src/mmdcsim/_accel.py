"""Numba acceleration toggle.

The per-slot data-plane service loop is the hot spot of a run and is
compiled with numba by default.  Set ``MMDCSIM_NUMBA=0`` to run the exact
same functions uncompiled (plain Python/numpy), e.g. for debugging or on
machines without numba.  ``benchmarks/bench_kernels.py`` compares the two.
"""

import os


def _flag() -> bool:
    return os.environ.get("MMDCSIM_NUMBA", "1").strip().lower() not in {
        "0", "false", "no", "off",
    }


NUMBA_ENABLED = _flag()

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        """No-op stand-in for numba.njit; returns the function unchanged."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap
