#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-NumPy fallback.

Runs the spatial-layer kernels on representative shapes with both backends,
then times a full attribution run (forward + backward per probe image) in a
subprocess per backend, since the backend is chosen at import time.

Usage: python benchmarks/bench_kernels.py [--images N]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from modelspace.kernels import reference

try:
    from modelspace.kernels import _core as compiled
except ImportError:
    compiled = None


def _time(fn, repeats=30):
    fn()  # warmup
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def micro_benchmarks():
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.standard_normal((32, 32, 8)))
    w = np.ascontiguousarray(rng.standard_normal((3, 3, 8, 16)))
    b = np.ascontiguousarray(rng.standard_normal(16))
    out = reference.conv2d_forward(x, w, b, 1, 1)
    g = np.ascontiguousarray(rng.standard_normal(out.shape))
    _, argmax = reference.maxpool_forward(x, 2, 2, 0)
    gp = np.ascontiguousarray(rng.standard_normal((16, 16, 8)))

    cases = {
        "conv2d_forward 32x32x8 -> 16f": lambda impl: impl.conv2d_forward(x, w, b, 1, 1),
        "conv2d_backward_input": lambda impl: impl.conv2d_backward_input(g, w, 1, 1, x.shape),
        "maxpool_forward 2x2": lambda impl: impl.maxpool_forward(x, 2, 2, 0),
        "maxpool_backward": lambda impl: impl.maxpool_backward(gp, argmax, x.shape),
        "avgpool_forward 2x2": lambda impl: impl.avgpool_forward(x, 2, 2, 0),
        "avgpool_backward": lambda impl: impl.avgpool_backward(gp, 2, 2, 0, x.shape),
    }

    print(f"{'kernel':34s} {'python':>12s} {'cython':>12s} {'speedup':>9s}")
    for name, call in cases.items():
        t_py = _time(lambda: call(reference))
        if compiled is None:
            print(f"{name:34s} {t_py * 1e6:10.1f}us {'n/a':>12s} {'':>9s}")
            continue
        t_cy = _time(lambda: call(compiled))
        print(f"{name:34s} {t_py * 1e6:10.1f}us {t_cy * 1e6:10.1f}us {t_py / t_cy:8.1f}x")


_PIPELINE_SNIPPET = """
import time
import numpy as np
import modelspace as ms
from modelspace.attribution import attribute_probe
from modelspace.probe import ProbeSet
from modelspace.graph import Graph, LayerSpec
from modelspace.bundle import ModelSpec, PreprocSpec

size, n = 32, {images}
rng = np.random.default_rng(0)
layers = (
    LayerSpec("conv2d", weight=rng.standard_normal((3, 3, 3, 8)) * 0.3,
              bias=rng.standard_normal(8) * 0.1, stride=1, padding=1),
    LayerSpec("relu"),
    LayerSpec("maxpool", window=2, stride=2),
    LayerSpec("conv2d", weight=rng.standard_normal((3, 3, 8, 8)) * 0.3,
              bias=rng.standard_normal(8) * 0.1, stride=1, padding=1),
    LayerSpec("tanh"),
    LayerSpec("avgpool", window=2, stride=2),
    LayerSpec("flatten"),
    LayerSpec("dense", weight=rng.standard_normal((32, 8 * (size // 4) ** 2)) * 0.1),
)
model = ModelSpec("bench", "t",
                  PreprocSpec(size, size, 3, (0.5,) * 3, (0.5,) * 3),
                  Graph(layers, (size, size, 3)), "0" * 64)
probe = ProbeSet("bench", rng.uniform(0, 1, (n, size, size, 3)),
                 tuple(str(i) for i in range(n)))
attribute_probe(model, probe, "elrp")  # warmup path
t0 = time.perf_counter()
aset = attribute_probe(model, probe, "elrp")
dt = time.perf_counter() - t0
print(f"{{ms.kernel_backend():>7s}}: {{dt:.3f}}s for {{aset.passes}} passes "
      f"({{dt / aset.passes * 1e3:.2f}} ms/pass)")
"""


def pipeline_benchmark(images):
    print(f"\nend-to-end elrp attribution, one model, {images} probe images (32x32x3):")
    sys.stdout.flush()  # keep parent output ahead of subprocess output when piped
    for backend in ("python", "cython"):
        if backend == "cython" and compiled is None:
            print("  cython: extension not built")
            continue
        env = dict(os.environ, MODELSPACE_KERNELS=backend)
        subprocess.run(
            [sys.executable, "-c", _PIPELINE_SNIPPET.format(images=images)],
            env=env,
            check=True,
        )


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--images", type=int, default=100)
    args = parser.parse_args()
    if compiled is None:
        print("note: compiled kernels are not built; showing fallback timings only\n")
    micro_benchmarks()
    pipeline_benchmark(args.images)
