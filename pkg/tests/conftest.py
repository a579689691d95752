import os

import numpy as np
import pytest

from modelspace import load_model, load_probe
from modelspace.bundle import ModelSpec, PreprocSpec
from modelspace.graph import Graph, LayerSpec
from modelspace.synthetic import FamilySpec, generate_family, generate_probe

FAKE_CHECKSUM = "0" * 64


def make_model(model_id, layers, width, height, channels=1, mean=None, std=None):
    """In-memory ModelSpec without a bundle on disk."""
    mean = mean if mean is not None else (0.0,) * channels
    std = std if std is not None else (1.0,) * channels
    preproc = PreprocSpec(width=width, height=height, channels=channels, mean=mean, std=std)
    graph = Graph(tuple(layers), (width, height, channels))
    return ModelSpec(model_id=model_id, task="test", preproc=preproc, graph=graph, checksum=FAKE_CHECKSUM)


def linear_model(weight, model_id="lin"):
    """R = W @ x as a model over an (n,1,1) canvas with identity preprocessing."""
    weight = np.asarray(weight, dtype=np.float64)
    n = weight.shape[1]
    layers = [LayerSpec("flatten"), LayerSpec("dense", weight=weight)]
    return make_model(model_id, layers, width=n, height=1, channels=1)


def small_conv_model(model_id="conv", seed=0, size=8, mean=0.5, std=0.5, bias=True, act="tanh"):
    rng = np.random.default_rng(seed)
    flat = (size // 2) ** 2 * 4
    layers = [
        LayerSpec(
            "conv2d",
            weight=rng.standard_normal((3, 3, 3, 4)) * 0.4,
            bias=rng.standard_normal(4) * 0.1 if bias else None,
            stride=1,
            padding=1,
        ),
        LayerSpec("relu"),
        LayerSpec("maxpool", window=2, stride=2),
        LayerSpec("flatten"),
        LayerSpec(
            "dense",
            weight=rng.standard_normal((6, flat)) * 0.2,
            bias=rng.standard_normal(6) * 0.1 if bias else None,
        ),
        LayerSpec(act),
    ]
    return make_model(model_id, layers, width=size, height=size, channels=3,
                      mean=(mean,) * 3, std=(std,) * 3)


@pytest.fixture(scope="session")
def family_dir(tmp_path_factory):
    """Small 3-group family plus a 40-image probe, shared across tests."""
    root = tmp_path_factory.mktemp("family")
    spec = FamilySpec(groups=3, per_group=2, sigma=0.05, seed=11)
    paths = generate_family(spec, os.path.join(root, "models"))
    generate_probe(os.path.join(root, "probe"), 40, seed=11)
    return {"root": root, "spec": spec, "paths": paths}


@pytest.fixture(scope="session")
def family_models(family_dir):
    return [load_model(p) for p in family_dir["paths"]]


@pytest.fixture(scope="session")
def family_probe(family_dir):
    return load_probe(os.path.join(family_dir["root"], "probe"))
