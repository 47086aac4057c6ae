"""glibc allocator tuning.

Training allocates many short-lived arrays of a few hundred KB. With the default
glibc thresholds each of them is mmapped and returned to the OS, and the page
faults dominate the arithmetic. Raising the thresholds keeps them on the heap.
Set ``TPC_NO_MALLOPT=1`` to skip.
"""

import ctypes
import ctypes.util
import os
import sys

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2
_M_MMAP_THRESHOLD = -3


def tune_allocator():
    if not sys.platform.startswith("linux") or os.environ.get("TPC_NO_MALLOPT"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = mallopt(_M_MMAP_THRESHOLD, 64 << 20)
    ok &= mallopt(_M_TRIM_THRESHOLD, 256 << 20)
    ok &= mallopt(_M_TOP_PAD, 64 << 20)
    return bool(ok)
