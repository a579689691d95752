"""Layered computation graphs: forward inference and reverse-mode gradients.

Graphs are simple chains of layers over float64 tensors.  Two backward modes
are provided: the standard vector-Jacobian product, and a modified pass where
each elementwise nonlinearity backpropagates through g(z) = f(z) / (z + eps*sign(z))
instead of f'(z).  The modified pass is what makes epsilon-LRP attributions
computable as input-times-gradient in a single sweep.

Image-like tensors are laid out (width, height, channels); convolution
weights are (kw, kh, c_in, c_out).
"""

from dataclasses import dataclass, field
from math import prod

import numpy as np

from . import kernels
from .errors import NonFiniteValue, ShapeMismatch

LAYER_KINDS = (
    "dense",
    "conv2d",
    "relu",
    "sigmoid",
    "tanh",
    "avgpool",
    "maxpool",
    "flatten",
)
_ACTIVATIONS = ("relu", "sigmoid", "tanh")
_POOLS = ("avgpool", "maxpool")


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    window: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ValueError(f"{self.kind}: stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"{self.kind}: padding must be >= 0, got {self.padding}")
        if self.kind in _POOLS and self.window < 1:
            raise ValueError(f"{self.kind}: pool window must be >= 1, got {self.window}")
        if self.kind in _POOLS and self.padding >= self.window:
            raise ValueError(f"{self.kind}: padding must be smaller than the window")
        for name in ("weight", "bias"):
            arr = getattr(self, name)
            if arr is not None:
                a = np.ascontiguousarray(arr, dtype=np.float64)
                a.setflags(write=False)
                object.__setattr__(self, name, a)

    def param_count(self):
        n = 0
        if self.weight is not None:
            n += self.weight.size
        if self.bias is not None:
            n += self.bias.size
        return n


def infer_shapes(layers, input_shape):
    """Per-layer output shapes for a chain, or ShapeMismatch on the first bad layer."""
    if not layers:
        raise ShapeMismatch("graph", "at least one layer", "empty chain")
    shape = tuple(int(s) for s in input_shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeMismatch("graph input", "positive extents", shape)
    shapes = []
    for i, layer in enumerate(layers):
        where = f"layer {i} ({layer.kind})"
        if layer.kind == "dense":
            if layer.weight is None or layer.weight.ndim != 2:
                raise ShapeMismatch(where, "2-d weight matrix", getattr(layer.weight, "shape", None))
            out_dim, in_dim = layer.weight.shape
            if shape != (in_dim,):
                raise ShapeMismatch(where, (in_dim,), shape)
            if layer.bias is not None and layer.bias.shape != (out_dim,):
                raise ShapeMismatch(where, (out_dim,), layer.bias.shape)
            shape = (out_dim,)
        elif layer.kind == "conv2d":
            if layer.weight is None or layer.weight.ndim != 4:
                raise ShapeMismatch(where, "4-d weight (kw,kh,cin,cout)", getattr(layer.weight, "shape", None))
            kw, kh, cin, cout = layer.weight.shape
            if len(shape) != 3 or shape[2] != cin:
                raise ShapeMismatch(where, f"(W,H,{cin})", shape)
            if layer.bias is not None and layer.bias.shape != (cout,):
                raise ShapeMismatch(where, (cout,), layer.bias.shape)
            ow = (shape[0] + 2 * layer.padding - kw) // layer.stride + 1
            oh = (shape[1] + 2 * layer.padding - kh) // layer.stride + 1
            if ow < 1 or oh < 1:
                raise ShapeMismatch(where, "kernel no larger than padded input", shape)
            shape = (ow, oh, cout)
        elif layer.kind in _POOLS:
            if len(shape) != 3:
                raise ShapeMismatch(where, "3-d input (W,H,C)", shape)
            ow = (shape[0] + 2 * layer.padding - layer.window) // layer.stride + 1
            oh = (shape[1] + 2 * layer.padding - layer.window) // layer.stride + 1
            if ow < 1 or oh < 1:
                raise ShapeMismatch(where, "window no larger than padded input", shape)
            shape = (ow, oh, shape[2])
        elif layer.kind == "flatten":
            shape = (prod(shape),)
        # elementwise activations keep the shape
        shapes.append(shape)
    return shapes


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable chain of layers with validated shapes."""

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    layer_shapes: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        shapes = infer_shapes(self.layers, self.input_shape)
        object.__setattr__(self, "layer_shapes", tuple(shapes))

    @property
    def output_shape(self):
        return self.layer_shapes[-1]

    @property
    def dim(self):
        """Number of representation units produced by the chain."""
        return prod(self.output_shape)

    def param_count(self):
        return sum(layer.param_count() for layer in self.layers)


@dataclass(frozen=True, eq=False)
class TapeState:
    """Per-layer (input, output) activations cached by one forward pass."""

    inputs: tuple[np.ndarray, ...]
    outputs: tuple[np.ndarray, ...]
    aux: tuple  # maxpool argmax arrays; None elsewhere


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(graph, x):
    """Run the chain on x, returning (representation, tape)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != graph.input_shape:
        raise ShapeMismatch("graph input", graph.input_shape, x.shape)
    inputs, outputs, aux = [], [], []
    cur = x
    for i, layer in enumerate(graph.layers):
        inputs.append(cur)
        extra = None
        if layer.kind == "dense":
            bias = layer.bias if layer.bias is not None else 0.0
            cur = layer.weight @ cur + bias
        elif layer.kind == "conv2d":
            bias = layer.bias
            if bias is None:
                bias = np.zeros(layer.weight.shape[3])
            cur = kernels.conv2d_forward(cur, layer.weight, bias, layer.stride, layer.padding)
        elif layer.kind == "relu":
            cur = np.maximum(cur, 0.0)
        elif layer.kind == "sigmoid":
            cur = _sigmoid(cur)
        elif layer.kind == "tanh":
            cur = np.tanh(cur)
        elif layer.kind == "maxpool":
            cur, extra = kernels.maxpool_forward(cur, layer.window, layer.stride, layer.padding)
        elif layer.kind == "avgpool":
            cur = kernels.avgpool_forward(cur, layer.window, layer.stride, layer.padding)
        elif layer.kind == "flatten":
            cur = cur.reshape(-1)
        if not np.all(np.isfinite(cur)):
            raise NonFiniteValue(f"layer {i} ({layer.kind}) produced non-finite values")
        outputs.append(cur)
        aux.append(extra)
    return cur, TapeState(tuple(inputs), tuple(outputs), tuple(aux))


def _backprop(graph, tape, seed, g_rule, epsilon):
    seed = np.ascontiguousarray(seed, dtype=np.float64)
    out_shape = tape.outputs[-1].shape
    if seed.shape != out_shape:
        raise ShapeMismatch("backward seed", out_shape, seed.shape)
    g = seed
    for i in range(len(graph.layers) - 1, -1, -1):
        layer = graph.layers[i]
        z = tape.inputs[i]
        if layer.kind == "dense":
            g = layer.weight.T @ g
        elif layer.kind == "conv2d":
            g = kernels.conv2d_backward_input(g, layer.weight, layer.stride, layer.padding, z.shape)
        elif layer.kind in _ACTIVATIONS:
            f = tape.outputs[i]
            if g_rule:
                denom = z + epsilon * np.where(z >= 0, 1.0, -1.0)
                g = g * (f / denom)
            elif layer.kind == "relu":
                g = g * (z > 0)
            elif layer.kind == "sigmoid":
                g = g * (f * (1.0 - f))
            else:  # tanh
                g = g * (1.0 - f * f)
        elif layer.kind == "maxpool":
            g = kernels.maxpool_backward(g, tape.aux[i], z.shape)
        elif layer.kind == "avgpool":
            g = kernels.avgpool_backward(g, layer.window, layer.stride, layer.padding, z.shape)
        elif layer.kind == "flatten":
            g = g.reshape(z.shape)
    return g


def backward(graph, tape, seed):
    """Vector-Jacobian product: d(seed . R)/dx at the input of the chain."""
    return _backprop(graph, tape, seed, g_rule=False, epsilon=0.0)


def backward_modified(graph, tape, seed, epsilon):
    """Like backward, but nonlinearities use g(z) = f(z)/(z + eps*sign(z)).

    sign(0) is taken as +1 so the denominator never vanishes.  Linear, pool
    and flatten layers propagate exactly as in backward (maxpool routes to
    the argmax).
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return _backprop(graph, tape, seed, g_rule=True, epsilon=epsilon)


def unit_seed(graph, k):
    """Seed selecting representation unit k (flat index into the output)."""
    if not 0 <= k < graph.dim:
        raise IndexError(f"unit {k} out of range for D={graph.dim}")
    seed = np.zeros(graph.output_shape)
    seed.reshape(-1)[k] = 1.0
    return seed


def mean_seed(graph):
    """Seed averaging all representation units: (1/D) * ones."""
    return np.full(graph.output_shape, 1.0 / graph.dim)
