"""Backend selection for the spatial-layer kernels.

The compiled extension (`modelspace.kernels._core`) is preferred when it was
built; otherwise the pure-NumPy reference implementation is used.  Set
MODELSPACE_KERNELS=python or =cython to force a backend.  The two backends
agree to within a few ulps; cross-backend tests pin 1e-12 relative.
"""

import os

import numpy as np

from . import reference as _reference

try:
    from . import _core as _compiled
except ImportError:
    _compiled = None

_requested = os.environ.get("MODELSPACE_KERNELS", "auto")
if _requested == "python":
    _impl = _reference
elif _requested == "cython":
    if _compiled is None:
        raise ImportError(
            "MODELSPACE_KERNELS=cython but the compiled extension is not built"
        )
    _impl = _compiled
elif _requested == "auto":
    _impl = _compiled if _compiled is not None else _reference
else:
    raise ValueError(f"unknown MODELSPACE_KERNELS value: {_requested!r}")


def backend():
    """Name of the active backend: 'cython' or 'python'."""
    return "cython" if _impl is _compiled else "python"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b, stride, padding):
    return _impl.conv2d_forward(_f64(x), _f64(w), _f64(b), stride, padding)


def conv2d_backward_input(g, w, stride, padding, in_shape):
    return _impl.conv2d_backward_input(_f64(g), _f64(w), stride, padding, tuple(in_shape))


def maxpool_forward(x, window, stride, padding):
    return _impl.maxpool_forward(_f64(x), window, stride, padding)


def maxpool_backward(g, argmax, in_shape):
    argmax = np.ascontiguousarray(argmax, dtype=np.int64)
    return _impl.maxpool_backward(_f64(g), argmax, tuple(in_shape))


def avgpool_forward(x, window, stride, padding):
    return _impl.avgpool_forward(_f64(x), window, stride, padding)


def avgpool_backward(g, window, stride, padding, in_shape):
    return _impl.avgpool_backward(_f64(g), window, stride, padding, tuple(in_shape))
