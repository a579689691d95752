"""Pure-NumPy kernels for the spatial layers.

This is the fallback backend used when the compiled extension is not built.
All arrays are float64 and laid out (width, height, channels); convolution
weights are (kw, kh, c_in, c_out).  Every operation here is deterministic:
no BLAS matmul is involved (einsum with optimize=False), so repeated calls
produce bit-identical results.
"""

import numpy as np


def _windows(x, kw, kh, stride):
    """Strided view of all (kw, kh) patches of x at the given stride."""
    w, h, c = x.shape
    ow = (w - kw) // stride + 1
    oh = (h - kh) // stride + 1
    s0, s1, s2 = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (ow, oh, kw, kh, c), (s0 * stride, s1 * stride, s0, s1, s2)
    )


def conv2d_forward(x, w, b, stride, padding):
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    win = _windows(xp, w.shape[0], w.shape[1], stride)
    out = np.einsum("xyabc,abcd->xyd", win, w)
    out += b
    return np.ascontiguousarray(out)


def conv2d_backward_input(g, w, stride, padding, in_shape):
    kw, kh, cin, _ = w.shape
    iw, ih, _ = in_shape
    ow, oh, _ = g.shape
    gp = np.zeros((iw + 2 * padding, ih + 2 * padding, cin))
    for dx in range(kw):
        for dy in range(kh):
            contrib = np.einsum("xyo,co->xyc", g, w[dx, dy])
            gp[dx : dx + ow * stride : stride, dy : dy + oh * stride : stride] += contrib
    if padding:
        gp = gp[padding : padding + iw, padding : padding + ih]
    return np.ascontiguousarray(gp)


def maxpool_forward(x, window, stride, padding):
    w, h, c = x.shape
    if padding:
        xp = np.pad(
            x,
            ((padding, padding), (padding, padding), (0, 0)),
            constant_values=-np.inf,
        )
    else:
        xp = x
    win = _windows(xp, window, window, stride)
    ow, oh = win.shape[:2]
    flat = win.reshape(ow, oh, window * window, c)
    # argmax scans dx-major, dy-minor; ties keep the first hit, which is the
    # same rule the compiled backend uses.
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[:, :, None, :], axis=2)[:, :, 0, :]
    dx = arg // window
    dy = arg - dx * window
    sx = np.arange(ow)[:, None, None] * stride + dx - padding
    sy = np.arange(oh)[None, :, None] * stride + dy - padding
    idx = (sx * h + sy) * c + np.arange(c)[None, None, :]
    return np.ascontiguousarray(out), np.ascontiguousarray(idx.astype(np.int64))


def maxpool_backward(g, argmax, in_shape):
    gi = np.zeros(int(np.prod(in_shape)))
    np.add.at(gi, argmax.ravel(), g.ravel())
    return gi.reshape(in_shape)


def avgpool_forward(x, window, stride, padding):
    # Zero padding is included in the average: the divisor is always the
    # full window area.
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    win = _windows(xp, window, window, stride)
    out = np.einsum("xyabc->xyc", win) / float(window * window)
    return np.ascontiguousarray(out)


def avgpool_backward(g, window, stride, padding, in_shape):
    iw, ih, c = in_shape
    ow, oh, _ = g.shape
    share = g / float(window * window)
    gp = np.zeros((iw + 2 * padding, ih + 2 * padding, c))
    for dx in range(window):
        for dy in range(window):
            gp[dx : dx + ow * stride : stride, dy : dy + oh * stride : stride] += share
    if padding:
        gp = gp[padding : padding + iw, padding : padding + ih]
    return np.ascontiguousarray(gp)
