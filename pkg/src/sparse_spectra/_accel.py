"""Numba switch.

Set ``SPARSE_SPECTRA_NUMBA=0`` to run every kernel through its pure-numpy
twin instead of the compiled loop.  Read once at import time.
"""
import os

USE_NUMBA = os.getenv("SPARSE_SPECTRA_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover
    _njit = None
    USE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or the identity when numba is unavailable."""
    if _njit is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _njit(*args, **kwargs)
