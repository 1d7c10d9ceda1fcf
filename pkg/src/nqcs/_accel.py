"""Optional numba acceleration.

Kernels in :mod:`nqcs.kernels` are compiled with ``numba.njit`` when numba
imports cleanly and ``NQCS_DISABLE_NUMBA`` is unset (or ``0``).  Otherwise the
pure numpy implementations are used.  The flag is read once at import time.
"""
import os

_FLAG = os.environ.get("NQCS_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    if DISABLED_BY_ENV:
        raise ImportError("disabled by NQCS_DISABLE_NUMBA")
    import numba as _numba
except ImportError:
    _numba = None

NUMBA_AVAILABLE = _numba is not None
NUMBA_ENABLED = NUMBA_AVAILABLE


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if _numba is None:
            return f
        return _numba.njit(**kwargs)(f)

    if func is None:
        return wrap
    return wrap(func)


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
