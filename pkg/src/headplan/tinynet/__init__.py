"""Minimal double-precision conv engine for module verification.

Hot kernels live in a compiled extension (_convkern) with a pure-Python
fallback selected at import; see _backend.BACKEND for which one is active.
"""

from ._backend import BACKEND
from .conv import ConvLayer, conv_backward, conv_forward, conv_output_shape
from .dilated import BRANCH_DILATIONS, DilatedModule, module_backward, module_forward
from .receptive import (
    gradient_support,
    receptive_field_analytic,
    support_bbox_extent,
    support_offsets,
)
from .tensor import Tensor

__all__ = [
    "BACKEND",
    "BRANCH_DILATIONS",
    "ConvLayer",
    "DilatedModule",
    "Tensor",
    "conv_backward",
    "conv_forward",
    "conv_output_shape",
    "gradient_support",
    "module_backward",
    "module_forward",
    "receptive_field_analytic",
    "support_bbox_extent",
    "support_offsets",
]
