"""Kernel backend selection.

Trajectory drivers are written once in the subset of numpy that numba
compiles.  The few primitives that dominate the cost have two versions: an
explicit-loop one that is only fast when compiled, and a vectorised numpy
one.  By default everything is compiled with ``numba.njit`` and the loop
primitives are used; setting ``CAVSME_DISABLE_NUMBA=1`` (or running without
numba installed) runs the drivers under the interpreter with the vectorised
primitives, which is the pure-numpy fallback path.
"""

import os

_FLAG = os.environ.get("CAVSME_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")
BACKEND = "numba" if USE_NUMBA else "numpy"


def jit(fn):
    """Compile ``fn`` in nopython mode when the numba backend is active."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def pick(loop_fn, numpy_fn):
    """Compiled ``loop_fn`` under numba, otherwise the vectorised ``numpy_fn``."""
    return jit(loop_fn) if USE_NUMBA else numpy_fn
