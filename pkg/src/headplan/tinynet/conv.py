"""2-D convolution layers with stride and dilation, zero same-padding."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import _backend
from .tensor import Tensor


class ConvLayer:
    """Weights (c_out, c_in, k, k), optional bias, stride, dilation.

    Kernel size must be odd so same-padding d*(k-1)/2 centres the taps.
    """

    __slots__ = ("weights", "bias", "stride", "dilation")

    def __init__(self, weights, bias=None, stride: int = 1, dilation: int = 1):
        w = np.array(weights, dtype=np.float64, order="C")
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"weights must be (c_out, c_in, k, k), got {w.shape}")
        if w.shape[2] % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {w.shape[2]}")
        if stride < 1 or dilation < 1:
            raise ValueError("stride and dilation must be >= 1")
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        self.weights = w
        if bias is not None:
            b = np.array(bias, dtype=np.float64)
            if b.shape != (w.shape[0],):
                raise ValueError(f"bias must have shape ({w.shape[0]},), got {b.shape}")
            b.setflags(write=False)
            self.bias = b
        else:
            self.bias = None
        self.stride = stride
        self.dilation = dilation

    @classmethod
    def random(cls, c_in: int, c_out: int, k: int, rng: np.random.Generator,
               stride: int = 1, dilation: int = 1, bias: bool = False,
               positive: bool = False) -> "ConvLayer":
        lo, hi = (0.1, 1.0) if positive else (-1.0, 1.0)
        w = rng.uniform(lo, hi, size=(c_out, c_in, k, k))
        b = rng.uniform(lo, hi, size=c_out) if bias else None
        return cls(w, b, stride=stride, dilation=dilation)

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def k(self) -> int:
        return self.weights.shape[2]

    @property
    def padding(self) -> int:
        return self.dilation * (self.k - 1) // 2

    @property
    def n_params(self) -> int:
        return self.weights.size + (self.bias.size if self.bias is not None else 0)


def conv_forward(layer: ConvLayer, x: Tensor) -> Tensor:
    if x.shape[1] != layer.c_in:
        raise ValueError(f"input has {x.shape[1]} channels, layer expects {layer.c_in}")
    out = _backend.conv2d_forward(x.data, layer.weights, layer.stride,
                                  layer.dilation, layer.padding)
    if layer.bias is not None:
        out = out + layer.bias[None, :, None, None]
    return Tensor(out)


def conv_backward(layer: ConvLayer, x: Tensor, grad_out: Tensor
                  ) -> tuple[Tensor, np.ndarray, Optional[np.ndarray]]:
    """Exact gradients of conv_forward: (grad_x, grad_w, grad_b).

    grad_b is None for a bias-free layer.
    """
    if x.shape[1] != layer.c_in:
        raise ValueError(f"input has {x.shape[1]} channels, layer expects {layer.c_in}")
    expected = conv_output_shape(layer, x.shape)
    if grad_out.shape != expected:
        raise ValueError(f"grad_out shape {grad_out.shape} != forward output {expected}")
    gx, gw = _backend.conv2d_backward(x.data, layer.weights, grad_out.data,
                                      layer.stride, layer.dilation, layer.padding)
    gb = grad_out.data.sum(axis=(0, 2, 3)) if layer.bias is not None else None
    return Tensor(gx), gw, gb


def conv_output_shape(layer: ConvLayer, in_shape) -> tuple[int, int, int, int]:
    b, _, h, w = in_shape
    span = layer.dilation * (layer.k - 1)
    ho = (h + 2 * layer.padding - span - 1) // layer.stride + 1
    wo = (w + 2 * layer.padding - span - 1) // layer.stride + 1
    return (b, layer.c_out, ho, wo)
