"""Kernel backend selection.

The hot inner loops (event thinning, Euler-Maruyama stepping) are compiled
with numba when it is importable.  Setting the environment variable
``QLIMITS_NUMBA=0`` forces the pure-Python/numpy fallback: the same source
runs undecorated, so both backends execute the identical algorithm and
consume the identical random stream.

``as_u64`` bridges the one semantic difference between the two modes:
under numba the RNG state must be a machine ``uint64`` (wrapping
arithmetic), while in plain Python it must be an ``int`` (arbitrary
precision, masked explicitly).  Kernel code casts through ``as_u64`` at
entry and masks with ``& MASK64`` after every arithmetic op, which is a
no-op for uint64 and exact for Python ints.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_requested() -> bool:
    flag = os.environ.get("QLIMITS_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


NUMBA_ENABLED = False
if _numba_requested():
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is an install-time choice
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    def jit(func):
        """Compile a kernel (cached, GIL released)."""
        return _njit(cache=True, nogil=True)(func)

    as_u64 = np.uint64
else:
    def jit(func):
        """Fallback: leave the kernel as plain Python."""
        return func

    as_u64 = int


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "python"
