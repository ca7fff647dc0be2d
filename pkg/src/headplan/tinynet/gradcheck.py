"""Central finite-difference verification of the analytic gradients.

The numeric route evaluates only forward passes, so it is independent of
the backward implementation it checks.  All maps here are linear in the
perturbed variables, so central differences are exact up to roundoff.
"""

from __future__ import annotations

import numpy as np

from .conv import ConvLayer, conv_backward, conv_forward
from .dilated import DilatedModule, module_backward, module_forward
from .tensor import Tensor

EPS = 1e-5


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _fd(loss_fn, arr: np.ndarray, eps: float) -> np.ndarray:
    grad = np.zeros_like(arr)
    flat = grad.reshape(-1)
    base = np.array(arr)
    for i in range(base.size):
        p = np.array(base)
        p.reshape(-1)[i] = base.reshape(-1)[i] + eps
        up = loss_fn(p)
        p.reshape(-1)[i] = base.reshape(-1)[i] - eps
        down = loss_fn(p)
        flat[i] = (up - down) / (2 * eps)
    return grad


def fd_check_conv(layer: ConvLayer, x: Tensor, grad_out: Tensor,
                  eps: float = EPS) -> float:
    """Max relative error between analytic and numeric conv gradients."""
    gx, gw, gb = conv_backward(layer, x, grad_out)
    g = grad_out.data

    def loss_from_x(xa):
        return float((conv_forward(layer, Tensor(xa)).data * g).sum())

    def loss_from_w(wa):
        lay = ConvLayer(wa, layer.bias, layer.stride, layer.dilation)
        return float((conv_forward(lay, x).data * g).sum())

    errs = [
        rel_error(gx.data, _fd(loss_from_x, x.data, eps)),
        rel_error(gw, _fd(loss_from_w, layer.weights, eps)),
    ]
    if layer.bias is not None:
        def loss_from_b(ba):
            lay = ConvLayer(layer.weights, ba, layer.stride, layer.dilation)
            return float((conv_forward(lay, x).data * g).sum())

        errs.append(rel_error(gb, _fd(loss_from_b, layer.bias, eps)))
    return max(errs)


def fd_check_module(m: DilatedModule, x: Tensor, grad_out: Tensor,
                    eps: float = EPS) -> float:
    """Max relative error over the module's input and every weight tensor."""
    gx, grads = module_backward(m, x, grad_out)
    g = grad_out.data

    def rebuild(name, wa):
        parts = {
            "branch_r1": m.branch_r1, "branch_r4": m.branch_r4,
            "branch_r8": m.branch_r8, "fuse": m.fuse,
        }
        old = parts[name]
        parts[name] = ConvLayer(wa, old.bias, old.stride, old.dilation)
        return DilatedModule(parts["branch_r1"], parts["branch_r4"],
                             parts["branch_r8"], parts["fuse"])

    def loss_from_x(xa):
        return float((module_forward(m, Tensor(xa)).data * g).sum())

    errs = [rel_error(gx.data, _fd(loss_from_x, x.data, eps))]
    for name in ("branch_r1", "branch_r4", "branch_r8", "fuse"):
        def loss_from_w(wa, _name=name):
            return float((module_forward(rebuild(_name, wa), x).data * g).sum())

        layer = getattr(m, name)
        errs.append(rel_error(grads[name][0], _fd(loss_from_w, layer.weights, eps)))
    return max(errs)
