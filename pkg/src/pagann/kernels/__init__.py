"""Hot graph kernels with a compiled and a pure-numpy implementation.

The active backend is chosen once at import time from ``PAGANN_DISABLE_NUMBA``;
both modules stay importable so tests and benchmarks can compare them.
"""

from __future__ import annotations

from .._accel import USE_NUMBA
from . import _numpy as numpy_backend

if USE_NUMBA:
    from . import _numba as numba_backend

    active = numba_backend
else:
    numba_backend = None
    active = numpy_backend

BACKEND = "numba" if USE_NUMBA else "numpy"

__all__ = ["active", "numpy_backend", "numba_backend", "BACKEND"]
