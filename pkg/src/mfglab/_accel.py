"""Numba acceleration plumbing.

Hot kernels are written as plain numpy functions and compiled with
``numba.njit`` unless the environment variable ``MFGLAB_NO_NUMBA`` is set to
a non-empty value other than ``0``, in which case the interpreted fallback is
used.  Both paths execute the same function body, so results are bit-for-bit
identical either way.
"""

import os

NUMBA_ENABLED = os.environ.get("MFGLAB_NO_NUMBA", "0") in ("", "0")

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    def jit_kernel(fn):
        """Compile a hot kernel, caching the machine code on disk."""
        return njit(cache=True)(fn)
else:
    def jit_kernel(fn):
        """Fallback: run the kernel as plain Python/numpy."""
        return fn
