"""Synthetic model families with controlled relatedness, plus probe images.

Families consist of P groups; members of a group share their early
parameterized layers exactly and differ by Gaussian perturbations of
magnitude sigma in the later ones, while groups are mutually independent.
Group input sizes vary so preprocessing genuinely resizes.  Everything is
keyed off one seed and generation is byte-deterministic.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .bundle import PreprocSpec, bilinear_resize, save_model
from .graph import LayerSpec
from .probe import write_pnm


@dataclass(frozen=True)
class FamilySpec:
    groups: int = 4
    per_group: int = 3
    shared_depth: int = 2  # parameterized layers shared verbatim within a group
    sigma: float = 0.05
    template: str = "conv_small"
    seed: int = 0
    base_size: int = 16
    vary_input_size: bool = True

    def __post_init__(self):
        if self.groups < 2:
            raise ValueError("a family needs at least 2 groups")
        if self.per_group < 1:
            raise ValueError("a group needs at least 1 member")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}")


def _conv_small(size, rng):
    """conv-relu-pool-conv-tanh-pool-flatten-dense chain on a (size,size,3) canvas."""
    c1 = rng.standard_normal((3, 3, 3, 6)) * np.sqrt(2.0 / (3 * 3 * 3))
    b1 = rng.standard_normal(6) * 0.05
    c2 = rng.standard_normal((3, 3, 6, 8)) * np.sqrt(2.0 / (3 * 3 * 6))
    b2 = rng.standard_normal(8) * 0.05
    pooled = size // 4
    flat = pooled * pooled * 8
    w = rng.standard_normal((32, flat)) * np.sqrt(2.0 / flat)
    b = rng.standard_normal(32) * 0.05
    return [
        LayerSpec("conv2d", weight=c1, bias=b1, stride=1, padding=1),
        LayerSpec("relu"),
        LayerSpec("maxpool", window=2, stride=2),
        LayerSpec("conv2d", weight=c2, bias=b2, stride=1, padding=1),
        LayerSpec("tanh"),
        LayerSpec("avgpool", window=2, stride=2),
        LayerSpec("flatten"),
        LayerSpec("dense", weight=w, bias=b),
    ]


TEMPLATES = {"conv_small": _conv_small}


def _group_input_size(spec, group):
    if not spec.vary_input_size:
        return spec.base_size
    return spec.base_size + 4 * (group % 2)  # template pools twice: keep divisible by 4


def _perturbed(layers, shared_depth, sigma, rng):
    out = []
    param_index = 0
    for layer in layers:
        if layer.weight is None:
            out.append(layer)
            continue
        if param_index >= shared_depth and sigma > 0:
            weight = layer.weight + sigma * rng.standard_normal(layer.weight.shape)
            bias = layer.bias
            if bias is not None:
                bias = bias + sigma * rng.standard_normal(bias.shape)
            out.append(
                LayerSpec(
                    layer.kind,
                    weight=weight,
                    bias=bias,
                    stride=layer.stride,
                    padding=layer.padding,
                    window=layer.window,
                )
            )
        else:
            out.append(layer)
        param_index += 1
    return out


def model_ids(spec):
    return [f"g{g}m{m}" for g in range(spec.groups) for m in range(spec.per_group)]


def group_of(model_id):
    return model_id.split("m")[0]


def generate_family(spec, out_dir):
    """Write one bundle per family member; returns the ordered bundle paths."""
    template = TEMPLATES[spec.template]
    paths = []
    for g in range(spec.groups):
        size = _group_input_size(spec, g)
        base_rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(g,)))
        base_layers = template(size, base_rng)
        preproc = PreprocSpec(
            width=size,
            height=size,
            channels=3,
            mean=(0.5, 0.5, 0.5),
            std=(0.5, 0.5, 0.5),
        )
        for m in range(spec.per_group):
            member_rng = np.random.default_rng(
                np.random.SeedSequence(entropy=spec.seed, spawn_key=(g, m))
            )
            layers = _perturbed(base_layers, spec.shared_depth, spec.sigma, member_rng)
            model_id = f"g{g}m{m}"
            path = os.path.join(out_dir, model_id)
            save_model(path, model_id, task=f"task-g{g}", preproc=preproc, layers=layers)
            paths.append(path)
    return paths


def group_relevance(spec):
    """Ground-truth relevant sets: each model's same-group siblings."""
    ids = model_ids(spec)
    return {
        mid: frozenset(other for other in ids if other != mid and group_of(other) == group_of(mid))
        for mid in ids
    }


def group_oracle_ranking(spec):
    """Oracle ranking: same-group siblings first, then the rest, id order."""
    ids = model_ids(spec)
    table = {}
    for target in ids:
        same = [m for m in ids if m != target and group_of(m) == group_of(target)]
        rest = [m for m in ids if m != target and group_of(m) != group_of(target)]
        table[target] = same + rest
    return table


def generate_probe(out_dir, count, width=16, height=16, channels=3, seed=0, name="synthetic"):
    """Write `count` smooth random PPM/PGM images plus a probe manifest.

    Images are low-resolution uniform noise upsampled bilinearly, so they are
    band-limited and quantize cleanly to 8 bits.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    files = []
    ext = "pgm" if channels == 1 else "ppm"
    for j in range(count):
        coarse = rng.uniform(0.0, 1.0, size=(4, 4, channels))
        image = bilinear_resize(coarse, width, height)
        fname = f"img{j:04d}.{ext}"
        write_pnm(os.path.join(out_dir, fname), image)
        files.append(fname)
    manifest = {
        "name": name,
        "width": width,
        "height": height,
        "channels": channels,
        "images": files,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path
