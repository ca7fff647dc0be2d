# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels (hot inner loops of the tensor engine).

Tap loops are hoisted outside the spatial loops and the valid output
range per tap is precomputed, so the innermost loop is branch-free and
auto-vectorizable.
"""

import numpy as np

cimport cython


NAME = "compiled"


cdef inline Py_ssize_t _lo(Py_ssize_t offset, Py_ssize_t stride) nogil:
    # smallest o >= 0 with o*stride + offset >= 0
    if offset >= 0:
        return 0
    return (-offset + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t offset, Py_ssize_t stride,
                           Py_ssize_t limit, Py_ssize_t n_out) nogil:
    # one past the largest o < n_out with o*stride + offset <= limit - 1
    cdef Py_ssize_t top = limit - 1 - offset
    if top < 0:
        return 0
    top = top // stride + 1
    return top if top < n_out else n_out


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                   int stride, int dilation, int pad):
    cdef Py_ssize_t b = x.shape[0], c_in = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t h_out = (h + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    cdef Py_ssize_t w_out = (wd + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    out_arr = np.zeros((b, c_out, h_out, w_out), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, o, i, oy, ox, ky, kx, dy, dx, iy, ix0
    cdef Py_ssize_t oy_lo, oy_hi, ox_lo, ox_hi
    cdef double wv
    with nogil:
        for n in range(b):
            for o in range(c_out):
                for i in range(c_in):
                    for ky in range(k):
                        dy = ky * dilation - pad
                        oy_lo = _lo(dy, stride)
                        oy_hi = _hi(dy, stride, h, h_out)
                        for kx in range(k):
                            dx = kx * dilation - pad
                            ox_lo = _lo(dx, stride)
                            ox_hi = _hi(dx, stride, wd, w_out)
                            wv = w[o, i, ky, kx]
                            if wv == 0.0:
                                continue
                            for oy in range(oy_lo, oy_hi):
                                iy = oy * stride + dy
                                ix0 = ox_lo * stride + dx
                                for ox in range(ox_lo, ox_hi):
                                    out[n, o, oy, ox] += wv * x[n, i, iy,
                                                                ix0 + (ox - ox_lo) * stride]
    return out_arr


def conv2d_backward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                    const double[:, :, :, ::1] grad_out,
                    int stride, int dilation, int pad):
    cdef Py_ssize_t b = x.shape[0], c_in = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t h_out = grad_out.shape[2], w_out = grad_out.shape[3]
    gx_arr = np.zeros((b, c_in, h, wd), dtype=np.float64)
    gw_arr = np.zeros((c_out, c_in, k, k), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t n, o, i, oy, ox, ky, kx, dy, dx, iy, ix0
    cdef Py_ssize_t oy_lo, oy_hi, ox_lo, ox_hi
    cdef double wv, acc, g
    with nogil:
        for n in range(b):
            for o in range(c_out):
                for i in range(c_in):
                    for ky in range(k):
                        dy = ky * dilation - pad
                        oy_lo = _lo(dy, stride)
                        oy_hi = _hi(dy, stride, h, h_out)
                        for kx in range(k):
                            dx = kx * dilation - pad
                            ox_lo = _lo(dx, stride)
                            ox_hi = _hi(dx, stride, wd, w_out)
                            wv = w[o, i, ky, kx]
                            acc = 0.0
                            for oy in range(oy_lo, oy_hi):
                                iy = oy * stride + dy
                                ix0 = ox_lo * stride + dx
                                for ox in range(ox_lo, ox_hi):
                                    g = grad_out[n, o, oy, ox]
                                    acc += g * x[n, i, iy, ix0 + (ox - ox_lo) * stride]
                                    gx[n, i, iy, ix0 + (ox - ox_lo) * stride] += g * wv
                            gw[o, i, ky, kx] += acc
    return gx_arr, gw_arr
