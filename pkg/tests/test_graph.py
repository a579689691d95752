"""Shape inference, forward/backward correctness, and the modified backward pass."""

import numpy as np
import pytest

from modelspace.checks import finite_difference_gradient, random_graph, run_gradcheck, safe_input
from modelspace.errors import NonFiniteValue, ShapeMismatch
from modelspace.graph import (
    Graph,
    LayerSpec,
    backward,
    backward_modified,
    forward,
    infer_shapes,
    mean_seed,
    unit_seed,
)


class TestShapeInference:
    def test_dense_shape_rule(self):
        layers = [LayerSpec("dense", weight=np.zeros((4, 3)))]
        assert infer_shapes(layers, (3,)) == [(4,)]

    def test_conv_padding_preserves_spatial_extent(self):
        layers = [LayerSpec("conv2d", weight=np.zeros((3, 3, 3, 8)), stride=1, padding=1)]
        assert infer_shapes(layers, (16, 16, 3)) == [(16, 16, 8)]

    def test_dense_inner_dimension_mismatch(self):
        layers = [LayerSpec("dense", weight=np.zeros((4, 3)))]
        with pytest.raises(ShapeMismatch):
            infer_shapes(layers, (5,))

    def test_chain_shapes(self):
        layers = [
            LayerSpec("conv2d", weight=np.zeros((3, 3, 1, 2)), padding=1),
            LayerSpec("relu"),
            LayerSpec("maxpool", window=2, stride=2),
            LayerSpec("flatten"),
        ]
        assert infer_shapes(layers, (6, 6, 1)) == [(6, 6, 2), (6, 6, 2), (3, 3, 2), (18,)]

    def test_empty_chain_rejected(self):
        with pytest.raises(ShapeMismatch):
            infer_shapes([], (3,))

    def test_bad_layer_params_rejected(self):
        with pytest.raises(ValueError):
            LayerSpec("conv2d", weight=np.zeros((3, 3, 1, 1)), stride=0)
        with pytest.raises(ValueError):
            LayerSpec("maxpool", window=0)
        with pytest.raises(ValueError):
            LayerSpec("avgpool", window=2, padding=2)

    def test_graph_dim_is_product_of_output(self):
        g = Graph((LayerSpec("conv2d", weight=np.zeros((3, 3, 1, 2)), padding=1),), (4, 4, 1))
        assert g.output_shape == (4, 4, 2)
        assert g.dim == 32


class TestForward:
    def test_flatten_identity(self):
        g = Graph((LayerSpec("flatten"),), (2, 2, 1))
        x = np.arange(4.0).reshape(2, 2, 1)
        rep, _ = forward(g, x)
        assert np.array_equal(rep, x.reshape(-1))

    def test_dense_relu_clamps_negative(self):
        g = Graph(
            (LayerSpec("dense", weight=np.eye(2), bias=np.zeros(2)), LayerSpec("relu")),
            (2,),
        )
        rep, _ = forward(g, np.array([-1.0, 2.0]))
        assert np.array_equal(rep, [0.0, 2.0])

    def test_conv_net_matches_naive_oracle(self):
        from test_kernels import naive_conv2d

        rng = np.random.default_rng(12)
        ws = [
            rng.standard_normal((3, 3, 2, 3)),
            rng.standard_normal((2, 2, 3, 4)),
            rng.standard_normal((3, 3, 4, 2)),
        ]
        bs = [rng.standard_normal(w.shape[3]) for w in ws]
        strides = [1, 2, 1]
        paddings = [1, 0, 1]
        layers = tuple(
            LayerSpec("conv2d", weight=w, bias=b, stride=s, padding=p)
            for w, b, s, p in zip(ws, bs, strides, paddings)
        )
        g = Graph(layers, (8, 8, 2))
        x = rng.standard_normal((8, 8, 2))
        rep, _ = forward(g, x)

        cur = x
        for w, b, s, p in zip(ws, bs, strides, paddings):
            cur = naive_conv2d(cur, w, b, s, p)
        np.testing.assert_allclose(rep, cur, rtol=1e-12)

    def test_input_shape_checked(self):
        g = Graph((LayerSpec("flatten"),), (2, 2, 1))
        with pytest.raises(ShapeMismatch):
            forward(g, np.zeros((2, 2, 3)))

    def test_nonfinite_is_an_error(self):
        g = Graph((LayerSpec("dense", weight=np.full((1, 1), 1e308)),), (1,))
        with np.errstate(over="ignore"), pytest.raises(NonFiniteValue):
            forward(g, np.array([1e308]))

    def test_tape_caches_every_layer(self):
        g = Graph((LayerSpec("flatten"), LayerSpec("tanh")), (2, 2, 1))
        _, tape = forward(g, np.zeros((2, 2, 1)))
        assert len(tape.inputs) == len(tape.outputs) == 2
        assert tape.inputs[0].shape == (2, 2, 1)
        assert tape.outputs[1].shape == (4,)


class TestBackward:
    def test_linear_model_rows(self):
        w = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        g = Graph((LayerSpec("dense", weight=w),), (3,))
        _, tape = forward(g, np.array([0.3, -0.7, 1.1]))
        for k in range(2):
            grad = backward(g, tape, unit_seed(g, k))
            assert np.array_equal(grad, w[k])

    def test_zero_seed_gives_zero_gradient(self):
        g = random_graph(np.random.default_rng(0), trial=0)
        x = np.random.default_rng(1).uniform(-1, 1, g.input_shape)
        _, tape = forward(g, x)
        grad = backward(g, tape, np.zeros(g.output_shape))
        assert np.array_equal(grad, np.zeros(g.input_shape))

    def test_matches_finite_differences_on_random_net(self):
        rng = np.random.default_rng(21)
        g = random_graph(rng, trial=4)
        x = safe_input(g, rng)
        _, tape = forward(g, x)
        for k in (0, g.dim - 1):
            analytic = backward(g, tape, unit_seed(g, k))
            numeric = finite_difference_gradient(g, x, k)
            scale = max(np.linalg.norm(numeric), 1e-12)
            assert np.linalg.norm(analytic - numeric) / scale <= 1e-4

    def test_linearity_in_seed(self):
        rng = np.random.default_rng(31)
        g = random_graph(rng, trial=1)
        x = rng.uniform(-1, 1, g.input_shape)
        _, tape = forward(g, x)
        s1 = rng.standard_normal(g.output_shape)
        s2 = rng.standard_normal(g.output_shape)
        a, b = 0.37, -1.21
        combined = backward(g, tape, a * s1 + b * s2)
        separate = a * backward(g, tape, s1) + b * backward(g, tape, s2)
        scale = max(np.abs(separate).max(), 1.0)
        assert np.abs(combined - separate).max() <= 1e-10 * scale

    def test_seed_shape_checked(self):
        g = Graph((LayerSpec("flatten"),), (2, 2, 1))
        _, tape = forward(g, np.zeros((2, 2, 1)))
        with pytest.raises(ShapeMismatch):
            backward(g, tape, np.zeros(3))

    def test_bit_identical_across_runs(self):
        rng = np.random.default_rng(5)
        g = random_graph(rng, trial=2)
        x = rng.uniform(-1, 1, g.input_shape)
        results = []
        for _ in range(3):
            rep, tape = forward(g, x)
            results.append((rep.tobytes(), backward(g, tape, mean_seed(g)).tobytes()))
        assert results[0] == results[1] == results[2]

    def test_gradcheck_engine(self):
        report = run_gradcheck(trials=8, seed=42)
        assert report["passed"]
        assert report["worst_relative_error"] <= 1e-4


def lrp_redistribution_oracle(weights, biases, x, k, eps):
    """Textbook relevance redistribution for a dense->tanh stack.

    The relevance of the selected output unit equals its value; every linear
    layer redistributes with the stabilized denominator z + eps*sign(z) and
    nonlinearities pass relevance through unchanged.
    """
    activations = [np.asarray(x, dtype=np.float64)]
    preacts = []
    a = activations[0]
    for w, b in zip(weights, biases):
        z = w @ a + b
        preacts.append(z)
        a = np.tanh(z)
        activations.append(a)
    relevance = np.zeros_like(activations[-1])
    relevance[k] = activations[-1][k]
    for i in range(len(weights) - 1, -1, -1):
        z = preacts[i]
        denom = z + eps * np.where(z >= 0, 1.0, -1.0)
        relevance = activations[i] * (weights[i].T @ (relevance / denom))
    return relevance


class TestBackwardModified:
    def test_degenerates_without_nonlinearities(self):
        rng = np.random.default_rng(8)
        layers = (
            LayerSpec("conv2d", weight=rng.standard_normal((3, 3, 1, 2)), padding=1),
            LayerSpec("avgpool", window=2, stride=2),
            LayerSpec("flatten"),
            LayerSpec("dense", weight=rng.standard_normal((3, 18))),
        )
        g = Graph(layers, (6, 6, 1))
        x = rng.standard_normal((6, 6, 1))
        _, tape = forward(g, x)
        seed = rng.standard_normal(g.output_shape)
        assert np.array_equal(backward_modified(g, tape, seed, 1e-4), backward(g, tape, seed))

    def test_relu_positive_region_perturbation_bound(self):
        rng = np.random.default_rng(13)
        g = Graph((LayerSpec("relu"),), (5,))
        x = rng.uniform(0.5, 2.0, 5)  # strictly positive pre-activations
        _, tape = forward(g, x)
        seed = rng.standard_normal(5)
        eps = 1e-4
        std = backward(g, tape, seed)
        mod = backward_modified(g, tape, seed, eps)
        bound = eps / x.min() * np.abs(std)
        assert (np.abs(mod - std) <= bound + 1e-15).all()

    def test_matches_lrp_redistribution_oracle(self):
        rng = np.random.default_rng(17)
        w1 = rng.standard_normal((5, 4))
        b1 = rng.standard_normal(5) * 0.3
        w2 = rng.standard_normal((3, 5))
        b2 = rng.standard_normal(3) * 0.3
        g = Graph(
            (
                LayerSpec("dense", weight=w1, bias=b1),
                LayerSpec("tanh"),
                LayerSpec("dense", weight=w2, bias=b2),
                LayerSpec("tanh"),
            ),
            (4,),
        )
        x = rng.standard_normal(4)
        _, tape = forward(g, x)
        eps = 1e-4
        for k in range(3):
            mine = x * backward_modified(g, tape, unit_seed(g, k), eps)
            oracle = lrp_redistribution_oracle([w1, w2], [b1, b2], x, k, eps)
            scale = max(np.linalg.norm(oracle), 1e-12)
            assert np.linalg.norm(mine - oracle) / scale <= 1e-8

    def test_epsilon_must_be_positive(self):
        g = Graph((LayerSpec("tanh"),), (2,))
        _, tape = forward(g, np.zeros(2))
        with pytest.raises(ValueError):
            backward_modified(g, tape, np.zeros(2), 0.0)
