# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the spatial layers.

Same contracts as kernels.reference: float64 arrays laid out
(width, height, channels), conv weights (kw, kh, c_in, c_out).  Padding is
handled by skipping out-of-bounds cells, which is arithmetically identical
to zero padding (conv, avgpool) and -inf padding (maxpool).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(const double[:, :, ::1] x, const double[:, :, :, ::1] w,
                   const double[::1] b, int stride, int padding):
    cdef Py_ssize_t iw = x.shape[0], ih = x.shape[1], cin = x.shape[2]
    cdef Py_ssize_t kw = w.shape[0], kh = w.shape[1], cout = w.shape[3]
    cdef Py_ssize_t ow = (iw + 2 * padding - kw) // stride + 1
    cdef Py_ssize_t oh = (ih + 2 * padding - kh) // stride + 1
    out_arr = np.empty((ow, oh, cout))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ox, oy, co, dx, dy, ci, px, py
    cdef double xv
    for ox in range(ow):
        for oy in range(oh):
            for co in range(cout):
                out[ox, oy, co] = b[co]
    # innermost loop runs over the contiguous output-channel axis
    for ox in range(ow):
        for dx in range(kw):
            px = ox * stride + dx - padding
            if px < 0 or px >= iw:
                continue
            for oy in range(oh):
                for dy in range(kh):
                    py = oy * stride + dy - padding
                    if py < 0 or py >= ih:
                        continue
                    for ci in range(cin):
                        xv = x[px, py, ci]
                        for co in range(cout):
                            out[ox, oy, co] += w[dx, dy, ci, co] * xv
    return out_arr


def conv2d_backward_input(const double[:, :, ::1] g, const double[:, :, :, ::1] w,
                          int stride, int padding, in_shape):
    cdef Py_ssize_t iw = in_shape[0], ih = in_shape[1], cin = in_shape[2]
    cdef Py_ssize_t kw = w.shape[0], kh = w.shape[1], cout = w.shape[3]
    cdef Py_ssize_t ow = g.shape[0], oh = g.shape[1]
    gi_arr = np.zeros((iw, ih, cin))
    cdef double[:, :, ::1] gi = gi_arr
    cdef Py_ssize_t ox, oy, co, dx, dy, ci, px, py
    cdef double gv
    for dx in range(kw):
        for dy in range(kh):
            for ox in range(ow):
                px = ox * stride + dx - padding
                if px < 0 or px >= iw:
                    continue
                for oy in range(oh):
                    py = oy * stride + dy - padding
                    if py < 0 or py >= ih:
                        continue
                    for ci in range(cin):
                        gv = 0.0
                        for co in range(cout):
                            gv += g[ox, oy, co] * w[dx, dy, ci, co]
                        gi[px, py, ci] += gv
    return gi_arr


def maxpool_forward(const double[:, :, ::1] x, int window, int stride, int padding):
    cdef Py_ssize_t iw = x.shape[0], ih = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t ow = (iw + 2 * padding - window) // stride + 1
    cdef Py_ssize_t oh = (ih + 2 * padding - window) // stride + 1
    out_arr = np.empty((ow, oh, c))
    idx_arr = np.empty((ow, oh, c), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t ox, oy, ch, dx, dy, px, py
    cdef double best, v
    cdef Py_ssize_t bidx
    for ox in range(ow):
        for oy in range(oh):
            for ch in range(c):
                best = -np.inf
                bidx = -1
                for dx in range(window):
                    px = ox * stride + dx - padding
                    if px < 0 or px >= iw:
                        continue
                    for dy in range(window):
                        py = oy * stride + dy - padding
                        if py < 0 or py >= ih:
                            continue
                        v = x[px, py, ch]
                        if v > best:
                            best = v
                            bidx = (px * ih + py) * c + ch
                out[ox, oy, ch] = best
                idx[ox, oy, ch] = bidx
    return out_arr, idx_arr


def maxpool_backward(const double[:, :, ::1] g, const cnp.int64_t[:, :, ::1] argmax, in_shape):
    gi_arr = np.zeros(int(np.prod(in_shape)))
    cdef double[::1] gi = gi_arr
    cdef Py_ssize_t ox, oy, ch
    for ox in range(g.shape[0]):
        for oy in range(g.shape[1]):
            for ch in range(g.shape[2]):
                gi[argmax[ox, oy, ch]] += g[ox, oy, ch]
    return gi_arr.reshape(in_shape)


def avgpool_forward(const double[:, :, ::1] x, int window, int stride, int padding):
    cdef Py_ssize_t iw = x.shape[0], ih = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t ow = (iw + 2 * padding - window) // stride + 1
    cdef Py_ssize_t oh = (ih + 2 * padding - window) // stride + 1
    cdef double area = <double>(window * window)
    out_arr = np.empty((ow, oh, c))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ox, oy, ch, dx, dy, px, py
    cdef double acc
    for ox in range(ow):
        for oy in range(oh):
            for ch in range(c):
                acc = 0.0
                for dx in range(window):
                    px = ox * stride + dx - padding
                    if px < 0 or px >= iw:
                        continue
                    for dy in range(window):
                        py = oy * stride + dy - padding
                        if py < 0 or py >= ih:
                            continue
                        acc += x[px, py, ch]
                out[ox, oy, ch] = acc / area
    return out_arr


def avgpool_backward(const double[:, :, ::1] g, int window, int stride, int padding,
                     in_shape):
    cdef Py_ssize_t iw = in_shape[0], ih = in_shape[1], c = in_shape[2]
    cdef Py_ssize_t ow = g.shape[0], oh = g.shape[1]
    cdef double area = <double>(window * window)
    gi_arr = np.zeros((iw, ih, c))
    cdef double[:, :, ::1] gi = gi_arr
    cdef Py_ssize_t ox, oy, ch, dx, dy, px, py
    for dx in range(window):
        for dy in range(window):
            for ox in range(ow):
                px = ox * stride + dx - padding
                if px < 0 or px >= iw:
                    continue
                for oy in range(oh):
                    py = oy * stride + dy - padding
                    if py < 0 or py >= ih:
                        continue
                    for ch in range(c):
                        gi[px, py, ch] += g[ox, oy, ch] / area
    return gi_arr
