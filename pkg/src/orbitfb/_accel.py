"""Numba dispatch.

Kernels in :mod:`orbitfb.kernels` are written once as plain loops and
compiled with ``numba.njit`` unless ``ORBITFB_DISABLE_NUMBA`` is set to a
truthy value, in which case the vectorized numpy fallbacks are used.
The flag is read once at import time.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("ORBITFB_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and not NUMBA_DISABLED


def njit(func):
    """``numba.njit(cache=True)`` or a no-op, depending on the flag."""
    if not USE_NUMBA:
        return func
    return _numba.njit(cache=True, nogil=True)(func)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
