"""Kernel lane selection.

The compiled extension is preferred when importable; the numpy lane is the
fallback. ``MGRDENOISE_KERNELS`` forces a lane: ``cython``, ``numpy`` or
``auto`` (default). Forcing ``cython`` when the extension is missing is a hard
error so benchmarks cannot silently compare a lane against itself.
"""

import os

from . import kernels_numpy

_choice = os.environ.get("MGRDENOISE_KERNELS", "auto").lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ValueError(f"MGRDENOISE_KERNELS must be auto|cython|numpy, got {_choice!r}")

kernels = kernels_numpy
if _choice in ("auto", "cython"):
    try:
        from mgrdenoise import _kernels as _compiled
        kernels = _compiled
    except ImportError:
        if _choice == "cython":
            raise


def backend_name() -> str:
    """Name of the active kernel lane ("cython" or "numpy")."""
    return kernels.NAME
