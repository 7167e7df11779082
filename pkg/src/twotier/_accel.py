"""numba switch.

Set ``TWOTIER_DISABLE_NUMBA=1`` to run every kernel on its pure numpy/Python
path. The choice is made once, at import time.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

DISABLED = os.environ.get("TWOTIER_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
HAVE_NUMBA = numba is not None
if HAVE_NUMBA and "NUMBA_THREADING_LAYER" not in os.environ:
    # omp is safe under concurrent callers; TBB here is too old and warns
    numba.config.THREADING_LAYER = "omp"
USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(func=None, **options):
    """``numba.njit`` when numba is available, otherwise the identity.

    Unlike the global flag this always compiles if numba is importable, so
    tests can compare both paths inside one process.
    """
    options.setdefault("nogil", True)
    options.setdefault("cache", True)

    def wrap(f):
        if not HAVE_NUMBA:
            return f
        return numba.njit(**options)(f)

    return wrap(func) if func is not None else wrap


def default_backend():
    return "numba" if USE_NUMBA else "numpy"


def resolve_backend(backend):
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return backend
