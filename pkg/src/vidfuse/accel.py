"""Optional numba acceleration for the hot kernels.

The recurrent-layer kernels in :mod:`vidfuse.kernels` are written in plain
numpy but compiled with ``numba.njit`` when available. Set the environment
variable ``VIDFUSE_DISABLE_NUMBA=1`` (before import) to force the pure-numpy
fallback; the fallback is the very same source, just not compiled, so both
paths compute the same operations. ``benchmarks/bench_kernels.py`` compares
the two.
"""

import os

try:
    import numba

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    _HAS_NUMBA = False

NUMBA_ENABLED = _HAS_NUMBA and os.environ.get("VIDFUSE_DISABLE_NUMBA", "0") != "1"


def maybe_jit(fn):
    """Compile ``fn`` with numba when enabled, else return it unchanged.

    Compiled dispatchers keep the original function on ``.py_func``; use
    :func:`python_impl` to reach it regardless of mode.
    """
    if NUMBA_ENABLED:
        return numba.njit(fn, cache=True)
    return fn


def python_impl(fn):
    """Return the uncompiled (pure numpy) implementation of a kernel."""
    return getattr(fn, "py_func", fn)
