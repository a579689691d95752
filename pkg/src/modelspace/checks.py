"""Gradient verification: backward passes against central finite differences.

Randomized small chains covering every layer kind are generated, inputs are
nudged away from relu kinks and pooling ties (where finite differences are
invalid), and the vector-Jacobian product for a random unit seed is compared
element-by-element against (f(x+h) - f(x-h)) / 2h.
"""

import numpy as np

from .graph import Graph, LayerSpec, backward, forward, unit_seed

FD_STEP = 1e-5
_SAFETY_MARGIN = 1e-3


def finite_difference_gradient(graph, x, k, step=FD_STEP):
    """Central-difference gradient of representation unit k w.r.t. every input."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = grad.reshape(-1)
    base = x.reshape(-1)
    for d in range(base.size):
        bumped = base.copy()
        bumped[d] = base[d] + step
        hi, _ = forward(graph, bumped.reshape(x.shape))
        bumped[d] = base[d] - step
        lo, _ = forward(graph, bumped.reshape(x.shape))
        flat[d] = (hi.reshape(-1)[k] - lo.reshape(-1)[k]) / (2.0 * step)
    return grad


def _margin(graph, x):
    """Distance of the forward pass from any relu kink or pooling tie."""
    _, tape = forward(graph, x)
    worst = np.inf
    for i, layer in enumerate(graph.layers):
        if layer.kind == "relu":
            worst = min(worst, float(np.abs(tape.inputs[i]).min()))
        elif layer.kind == "maxpool":
            z = tape.inputs[i]
            w, h, c = z.shape
            win, stride, pad = layer.window, layer.stride, layer.padding
            ow, oh, _ = tape.outputs[i].shape
            for ox in range(ow):
                for oy in range(oh):
                    for ch in range(c):
                        cells = []
                        for dx in range(win):
                            px = ox * stride + dx - pad
                            if not 0 <= px < w:
                                continue
                            for dy in range(win):
                                py = oy * stride + dy - pad
                                if 0 <= py < h:
                                    cells.append(z[px, py, ch])
                        if len(cells) > 1:
                            top = sorted(cells)[-2:]
                            worst = min(worst, float(top[1] - top[0]))
    return worst


def safe_input(graph, rng, margin=_SAFETY_MARGIN, attempts=200):
    """A random input whose forward pass stays clear of non-smooth points."""
    for _ in range(attempts):
        x = rng.uniform(-1.0, 1.0, size=graph.input_shape)
        if _margin(graph, x) >= margin:
            return x
    raise RuntimeError("could not find an input away from kinks and ties")


_ACTIVATION_CYCLE = ("relu", "sigmoid", "tanh")
_POOL_CYCLE = ("maxpool", "avgpool")


def random_graph(rng, trial=0, max_params=200):
    """Small random chain; the trial index cycles layer kinds for coverage."""
    while True:
        c_in = int(rng.integers(1, 3))
        size = int(rng.integers(5, 8))
        cout = int(rng.integers(2, 4))
        kernel = int(rng.integers(2, 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        act1 = _ACTIVATION_CYCLE[trial % 3]
        act2 = _ACTIVATION_CYCLE[(trial + 1) % 3]
        pool = _POOL_CYCLE[trial % 2]
        layers = [
            LayerSpec(
                "conv2d",
                weight=rng.standard_normal((kernel, kernel, c_in, cout)),
                bias=rng.standard_normal(cout) * 0.1,
                stride=stride,
                padding=padding,
            ),
            LayerSpec(act1),
            LayerSpec(pool, window=2, stride=2),
            LayerSpec("flatten"),
        ]
        try:
            probe_graph = Graph(tuple(layers), (size, size, c_in))
        except Exception:
            continue
        flat = probe_graph.dim
        out_dim = int(rng.integers(2, 5))
        layers.append(
            LayerSpec(
                "dense",
                weight=rng.standard_normal((out_dim, flat)) / np.sqrt(flat),
                bias=rng.standard_normal(out_dim) * 0.1,
            )
        )
        layers.append(LayerSpec(act2))
        graph = Graph(tuple(layers), (size, size, c_in))
        if graph.param_count() <= max_params:
            return graph


def run_gradcheck(trials=50, seed=0, tolerance=1e-4, step=FD_STEP):
    """Compare backward against finite differences on randomized graphs.

    Returns a report dict with the worst relative error per layer kind and
    overall; `passed` is True when every trial stays within tolerance.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    per_kind = {}
    failures = []
    for trial in range(trials):
        graph = random_graph(rng, trial=trial)
        x = safe_input(graph, rng)
        k = int(rng.integers(0, graph.dim))
        _, tape = forward(graph, x)
        analytic = backward(graph, tape, unit_seed(graph, k))
        numeric = finite_difference_gradient(graph, x, k, step=step)
        scale = max(float(np.linalg.norm(numeric)), 1e-12)
        rel = float(np.linalg.norm(analytic - numeric)) / scale
        worst = max(worst, rel)
        for layer in graph.layers:
            prev = per_kind.get(layer.kind, 0.0)
            per_kind[layer.kind] = max(prev, rel)
        if rel > tolerance:
            failures.append({"trial": trial, "relative_error": rel})
    kinds_seen = set(per_kind)
    return {
        "trials": trials,
        "seed": seed,
        "tolerance": tolerance,
        "step": step,
        "worst_relative_error": worst,
        "per_kind_worst": dict(sorted(per_kind.items())),
        "kinds_covered": sorted(kinds_seen),
        "failures": failures,
        "passed": not failures and kinds_seen >= set(("dense", "conv2d", "relu", "sigmoid", "tanh", "avgpool", "maxpool", "flatten")),
    }
