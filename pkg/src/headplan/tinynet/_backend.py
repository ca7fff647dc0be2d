"""Kernel backend selection.

The compiled extension is preferred; the pure-Python kernels are used
when it is missing or when the HEADPLAN_PURE environment variable is set
to a non-empty value (useful for benchmarking and debugging).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("HEADPLAN_PURE"):
    _impl = _kernels_py
else:
    try:
        from . import _convkern as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.NAME
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
