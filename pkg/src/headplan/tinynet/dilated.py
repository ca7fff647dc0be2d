"""Shortcut-fused multi-dilation convolution module.

Three parallel 3x3 branches (dilation 1, 4, 8) each map c channels to a
quarter width; their concatenation is mixed back to c channels by a 1x1
convolution and added to the identity shortcut.  Shapes are preserved
end to end, the largest-dilation branch sets the receptive extent, and
the branch mix fills in the coverage holes a lone large dilation leaves.
"""

from __future__ import annotations

import numpy as np

from .conv import ConvLayer, conv_backward, conv_forward
from .tensor import Tensor

BRANCH_DILATIONS = (1, 4, 8)


class DilatedModule:
    __slots__ = ("branch_r1", "branch_r4", "branch_r8", "fuse", "channels")

    def __init__(self, branch_r1: ConvLayer, branch_r4: ConvLayer,
                 branch_r8: ConvLayer, fuse: ConvLayer):
        branches = (branch_r1, branch_r4, branch_r8)
        c = branch_r1.c_in
        bw = branch_r1.c_out
        for br, d in zip(branches, BRANCH_DILATIONS):
            if br.c_in != c or br.c_out != bw:
                raise ValueError("branches must share input/output widths")
            if br.k != 3 or br.stride != 1 or br.dilation != d:
                raise ValueError(f"branch must be k=3, stride 1, dilation {d}")
        if fuse.k != 1 or fuse.c_in != 3 * bw or fuse.c_out != c or fuse.stride != 1:
            raise ValueError("fuse must be a 1x1 conv from 3*branch width back to c")
        self.branch_r1 = branch_r1
        self.branch_r4 = branch_r4
        self.branch_r8 = branch_r8
        self.fuse = fuse
        self.channels = c

    @classmethod
    def random(cls, channels: int, rng: np.random.Generator,
               branch_ratio: float = 0.25, positive: bool = False) -> "DilatedModule":
        """Build a module with random weights; branch width = channels*ratio."""
        bw = int(round(channels * branch_ratio))
        if bw < 1 or channels % max(1, int(round(1 / branch_ratio))) != 0:
            raise ValueError(
                f"channels {channels} not divisible for branch ratio {branch_ratio}")
        branches = [
            ConvLayer.random(channels, bw, 3, rng, dilation=d, positive=positive)
            for d in BRANCH_DILATIONS
        ]
        fuse = ConvLayer.random(3 * bw, channels, 1, rng, positive=positive)
        return cls(*branches, fuse)

    @property
    def branches(self) -> tuple[ConvLayer, ConvLayer, ConvLayer]:
        return (self.branch_r1, self.branch_r4, self.branch_r8)

    @property
    def n_params(self) -> int:
        return sum(br.n_params for br in self.branches) + self.fuse.n_params

    def receptive_extent(self) -> int:
        # Each branch is a single 3x3 conv: extent 1 + 2*d; the shortcut
        # contributes 1; the widest branch governs.
        return max(1 + 2 * d for d in BRANCH_DILATIONS)


def module_forward(m: DilatedModule, x: Tensor) -> Tensor:
    if x.shape[1] != m.channels:
        raise ValueError(f"input has {x.shape[1]} channels, module expects {m.channels}")
    outs = [conv_forward(br, x).data for br in m.branches]
    mixed = conv_forward(m.fuse, Tensor(np.concatenate(outs, axis=1)))
    return Tensor(x.data + mixed.data)


def module_backward(m: DilatedModule, x: Tensor, grad_out: Tensor
                    ) -> tuple[Tensor, dict]:
    """Gradients of module_forward: (grad_x, per-layer weight/bias grads)."""
    if grad_out.shape != x.shape:
        raise ValueError("module output shape equals input shape")
    outs = [conv_forward(br, x).data for br in m.branches]
    concat = Tensor(np.concatenate(outs, axis=1))
    g_concat, gw_fuse, gb_fuse = conv_backward(m.fuse, concat, grad_out)

    bw = m.branch_r1.c_out
    grad_x = np.array(grad_out.data)  # identity shortcut
    grads = {"fuse": (gw_fuse, gb_fuse)}
    for idx, (name, br) in enumerate(zip(("branch_r1", "branch_r4", "branch_r8"),
                                         m.branches)):
        g_slice = Tensor(np.ascontiguousarray(
            g_concat.data[:, idx * bw:(idx + 1) * bw]))
        gx_br, gw_br, gb_br = conv_backward(br, x, g_slice)
        grad_x += gx_br.data
        grads[name] = (gw_br, gb_br)
    return Tensor(grad_x), grads
