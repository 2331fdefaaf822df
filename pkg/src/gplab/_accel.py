"""Numba toggle.

Set ``GPLAB_DISABLE_NUMBA=1`` before import to run every hot kernel on its
pure-numpy path. When numba is missing the numpy path is used regardless.
"""
import os

DISABLED = os.environ.get("GPLAB_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _nb
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _nb = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or the identity decorator without numba."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return _nb.njit(*args, **kwargs)


def backend():
    return "numba" if USE_NUMBA else "numpy"
