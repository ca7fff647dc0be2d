"""Receptive-field analysis: analytic recurrence and empirical gradient support."""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .conv import ConvLayer, conv_backward, conv_forward, conv_output_shape
from .dilated import DilatedModule, module_backward
from .tensor import Tensor

Net = Union[ConvLayer, Sequence[ConvLayer], DilatedModule]


def receptive_field_analytic(chain) -> int:
    """Receptive extent (input pixels per side) of a layer chain.

    Standard recurrence: rf += (k-1)*d*jump, jump *= s.  A DilatedModule
    counts as the max over its branches (the shortcut contributes 1).
    """
    if isinstance(chain, DilatedModule):
        return chain.receptive_extent()
    if isinstance(chain, ConvLayer):
        chain = [chain]
    layers = list(chain)
    if not layers:
        raise ValueError("chain must be non-empty")
    rf = 1
    jump = 1
    for layer in layers:
        if isinstance(layer, DilatedModule):
            rf += (layer.receptive_extent() - 1) * jump
            continue
        rf += (layer.k - 1) * layer.dilation * jump
        jump *= layer.stride
    return rf


def _forward_chain(net: Net, x: Tensor) -> Tensor:
    if isinstance(net, DilatedModule):
        from .dilated import module_forward
        return module_forward(net, x)
    layers = [net] if isinstance(net, ConvLayer) else list(net)
    for layer in layers:
        x = conv_forward(layer, x)
    return x


def _backward_chain(net: Net, x: Tensor, grad_out: Tensor) -> Tensor:
    if isinstance(net, DilatedModule):
        gx, _ = module_backward(net, x, grad_out)
        return gx
    layers = [net] if isinstance(net, ConvLayer) else list(net)
    inputs = []
    cur = x
    for layer in layers:
        inputs.append(cur)
        cur = conv_forward(layer, cur)
    g = grad_out
    for layer, inp in zip(reversed(layers), reversed(inputs)):
        g, _, _ = conv_backward(layer, inp, g)
    return g


def _strides_of(net: Net) -> list[int]:
    if isinstance(net, DilatedModule):
        return [1]
    layers = [net] if isinstance(net, ConvLayer) else list(net)
    return [l.stride for l in layers]


def gradient_support(net: Net, input_hw: tuple[int, int],
                     out_pos: tuple[int, int]) -> np.ndarray:
    """Boolean (H, W) mask of input positions influencing one output position.

    Backpropagates a unit gradient from every output channel at out_pos
    through the net with a zero input (the maps are linear, so input
    values do not matter) and marks inputs with any nonzero gradient.
    Weights should be strictly positive so contributions cannot cancel.

    Only stride-1 chains are supported: there the output grid aligns with
    the input grid, and the analytic extent around out_pos must fit inside
    the input, otherwise border truncation would corrupt the mask.
    """
    if any(s != 1 for s in _strides_of(net)):
        raise ValueError("gradient_support requires a stride-1 chain")
    h, w = input_hw
    extent = receptive_field_analytic(net)
    half = (extent - 1) // 2
    oy, ox = out_pos
    if not (half <= oy < h - half and half <= ox < w - half):
        raise ValueError(
            f"receptive window ({extent}x{extent}) around {out_pos} would cross "
            f"the border of a {h}x{w} input")

    if isinstance(net, DilatedModule):
        c_in = net.channels
        out_channels = net.channels
        out_hw = (h, w)
    else:
        layers = [net] if isinstance(net, ConvLayer) else list(net)
        c_in = layers[0].c_in
        shape = (1, c_in, h, w)
        for layer in layers:
            shape = conv_output_shape(layer, shape)
        out_channels, out_hw = shape[1], shape[2:]
    x = Tensor.zeros((1, c_in, h, w))
    g = np.zeros((1, out_channels) + tuple(out_hw))
    g[0, :, oy, ox] = 1.0
    gx = _backward_chain(net, x, Tensor(g))
    return np.abs(gx.data).max(axis=(0, 1)) > 0.0


def support_offsets(mask: np.ndarray, center: tuple[int, int]) -> set[tuple[int, int]]:
    """Marked positions as (dy, dx) offsets from the chosen output position."""
    ys, xs = np.nonzero(mask)
    return {(int(y) - center[0], int(x) - center[1]) for y, x in zip(ys, xs)}


def support_bbox_extent(mask: np.ndarray) -> tuple[int, int]:
    """Height and width of the bounding box of the marked positions."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return (0, 0)
    return (int(ys.max() - ys.min() + 1), int(xs.max() - xs.min() + 1))
