"""Glibc allocator tuning for large-array churn.

Training allocates and frees multi-MB im2col/gradient buffers every step; with
glibc defaults those round-trip through mmap/munmap and the subsequent GEMMs
pay the page faults (measured ~3x slowdown on conv backward). Raising the mmap
and trim thresholds keeps the big blocks on the heap for reuse.

No-op on non-glibc platforms. Set MGRDENOISE_NO_MALLOC_TUNE=1 to disable.
"""

import ctypes
import os

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune() -> bool:
    if os.environ.get("MGRDENOISE_NO_MALLOC_TUNE"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        ok &= libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
        return bool(ok)
    except (OSError, AttributeError):
        return False


tuned = tune()
