"""Pure-Python convolution kernels (numpy fallback).

Direct convolution: an explicit loop over the k*k kernel taps with the
spatial work vectorized per tap.  Semantically identical to the compiled
kernels in _convkern.pyx; used when the extension is unavailable or when
HEADPLAN_PURE is set.
"""

from __future__ import annotations

import numpy as np

NAME = "pure-python"


def _tap_view(xp: np.ndarray, ky: int, kx: int, d: int, s: int,
              h_out: int, w_out: int) -> np.ndarray:
    y0 = ky * d
    x0 = kx * d
    return xp[:, :, y0: y0 + s * (h_out - 1) + 1: s, x0: x0 + s * (w_out - 1) + 1: s]


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, dilation: int,
                   pad: int) -> np.ndarray:
    b, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    h_out = (h + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    w_out = (wd + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((b, c_out, h_out, w_out), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            patch = _tap_view(xp, ky, kx, dilation, stride, h_out, w_out)
            out += np.einsum("bihw,oi->bohw", patch, w[:, :, ky, kx])
    return out


def conv2d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray,
                    stride: int, dilation: int, pad: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the forward map w.r.t. input and weights."""
    b, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    _, _, h_out, w_out = grad_out.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(w)
    for ky in range(k):
        for kx in range(k):
            patch = _tap_view(xp, ky, kx, dilation, stride, h_out, w_out)
            grad_w[:, :, ky, kx] = np.einsum("bohw,bihw->oi", grad_out, patch)
            gslice = _tap_view(grad_xp, ky, kx, dilation, stride, h_out, w_out)
            gslice += np.einsum("bohw,oi->bihw", grad_out, w[:, :, ky, kx])
    if pad:
        grad_x = grad_xp[:, :, pad:-pad, pad:-pad]
    else:
        grad_x = grad_xp
    return np.ascontiguousarray(grad_x), grad_w
