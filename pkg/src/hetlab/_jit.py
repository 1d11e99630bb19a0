"""Optional numba acceleration.

Kernels are written in the numba-compatible subset of numpy.  When numba is
not importable they run as ordinary Python (slow, but correct).
"""

try:  # pragma: no cover - exercised implicitly
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - fallback when numba missing
    _njit = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
