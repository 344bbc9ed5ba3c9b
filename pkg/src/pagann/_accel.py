"""Numba switch.

Set ``PAGANN_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. when
debugging or on platforms without an LLVM toolchain.
"""

from __future__ import annotations

import os

_FALSEY = {"", "0", "false", "no", "off"}


def numba_disabled() -> bool:
    return os.environ.get("PAGANN_DISABLE_NUMBA", "0").strip().lower() not in _FALSEY


try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not numba_disabled()


def njit(fn=None, **kwargs):
    """``numba.njit`` with the package defaults (nogil, on-disk cache)."""
    opts = {"nogil": True, "cache": True}
    opts.update(kwargs)

    def wrap(f):
        if not HAVE_NUMBA:
            return f
        import numba

        return numba.njit(**opts)(f)

    if fn is None:
        return wrap
    return wrap(fn)
