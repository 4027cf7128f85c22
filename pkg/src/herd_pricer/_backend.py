"""Kernel backend selection.

Hot loops are written once as plain Python over scalars and arrays and
compiled with ``numba.njit`` when numba is importable.  Setting
``HERD_PRICER_BACKEND=numpy`` in the environment (before import) disables
compilation and routes the dispatching callers to their vectorised numpy
paths instead.
"""
from __future__ import annotations

import os

_requested = os.environ.get("HERD_PRICER_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(
        f"HERD_PRICER_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba ships with the test image
    _numba = None

USE_NUMBA = _requested == "numba" and _numba is not None
BACKEND = "numba" if USE_NUMBA else "numpy"


def jit(fn):
    """``njit(cache=True, nogil=True)`` when numba is active, identity otherwise."""
    if USE_NUMBA:
        return _numba.njit(cache=True, nogil=True)(fn)
    return fn

