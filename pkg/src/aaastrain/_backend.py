"""Kernel backend selection.

Hot loops ship twice: a numba ``@njit`` version and a vectorized numpy
version. ``AAASTRAIN_BACKEND=numpy`` forces the fallback; the default is
numba when it imports, numpy otherwise.
"""
import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

_VALID = ("numba", "numpy")


def _initial_backend():
    requested = os.environ.get("AAASTRAIN_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested not in ("", "numba"):
        raise ValueError(f"AAASTRAIN_BACKEND must be one of {_VALID}, got {requested!r}")
    return "numba" if HAS_NUMBA else "numpy"


_current = _initial_backend()


def get_backend():
    return _current


def set_backend(name):
    """Switch backend at runtime; returns the previous one."""
    global _current
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _current = _current, name
    return previous


def njit(*args, **kwargs):
    """``numba.njit`` with nogil/cache defaults, or identity without numba."""
    kwargs.setdefault("nogil", True)
    kwargs.setdefault("cache", True)
    if not HAS_NUMBA:  # pragma: no cover
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)
