"""SVD-truncated CCA similarity between representation subspaces."""

import numpy as np
import pytest

from conftest import linear_model, make_model
from modelspace.errors import DegenerateSubspace, ProbeMismatch
from modelspace.graph import LayerSpec
from modelspace.probe import ProbeSet
from modelspace.svcca import (
    ActivationMatrix,
    collect_activations,
    correlation_matrix,
    svcca_correlation,
)


def _acts(values, model_id="m", checksum="p"):
    return ActivationMatrix(model_id=model_id, values=np.asarray(values, float), probe_checksum=checksum)


def _random_orthogonal(n, rng):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q


class TestSvccaCorrelation:
    def test_self_correlation_is_one(self):
        rng = np.random.default_rng(0)
        a = _acts(rng.standard_normal((8, 100)))
        assert svcca_correlation(a, a) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_rotation_is_one(self):
        rng = np.random.default_rng(1)
        base = rng.standard_normal((8, 100))
        q = _random_orthogonal(8, rng)
        a = _acts(base, "a")
        b = _acts(q @ base, "b")
        assert svcca_correlation(a, b) == pytest.approx(1.0, abs=1e-6)

    def test_independent_random_below_calibrated_bound(self):
        # calibration run observed mean ~0.117, max ~0.132 over 20 trials
        rng = np.random.default_rng(123)
        values = []
        for _ in range(20):
            a = _acts(rng.standard_normal((10, 500)), "a")
            b = _acts(rng.standard_normal((10, 500)), "b")
            values.append(svcca_correlation(a, b))
        assert np.mean(values) < 0.2
        assert np.mean(values) < 0.35  # looser documented bound

    def test_invertible_map_invariance_at_full_threshold(self):
        rng = np.random.default_rng(2)
        base_a = rng.standard_normal((6, 80))
        base_b = rng.standard_normal((6, 80))
        a = _acts(base_a, "a")
        b = _acts(base_b, "b")
        mix = np.eye(6) + 0.3 * rng.standard_normal((6, 6))  # well-conditioned
        mixed = _acts(mix @ base_a, "a2")
        plain = svcca_correlation(a, b, variance_threshold=1.0)
        remixed = svcca_correlation(mixed, b, variance_threshold=1.0)
        assert abs(plain - remixed) <= 1e-6

    def test_sample_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        base_a = rng.standard_normal((5, 60))
        base_b = rng.standard_normal((7, 60))
        perm = rng.permutation(60)
        plain = svcca_correlation(_acts(base_a, "a"), _acts(base_b, "b"))
        permuted = svcca_correlation(_acts(base_a[:, perm], "a"), _acts(base_b[:, perm], "b"))
        assert abs(plain - permuted) <= 1e-10

    def test_degenerate_subspace(self):
        a = _acts(np.zeros((4, 20)), "a")
        b = _acts(np.random.default_rng(4).standard_normal((4, 20)), "b")
        with pytest.raises(DegenerateSubspace):
            svcca_correlation(a, b)

    def test_probe_mismatch(self):
        rng = np.random.default_rng(5)
        a = _acts(rng.standard_normal((4, 20)), "a", checksum="p1")
        b = _acts(rng.standard_normal((4, 20)), "b", checksum="p2")
        with pytest.raises(ProbeMismatch):
            svcca_correlation(a, b)

    def test_threshold_validated(self):
        rng = np.random.default_rng(6)
        a = _acts(rng.standard_normal((4, 20)))
        with pytest.raises(ValueError):
            svcca_correlation(a, a, variance_threshold=0.0)

    def test_truncation_drops_noise_directions(self):
        # one dominant direction plus tiny noise: threshold 0.5 keeps rank 1
        rng = np.random.default_rng(7)
        direction = rng.standard_normal((1, 200))
        a = np.vstack([direction * 100, rng.standard_normal((3, 200)) * 1e-3])
        b = np.vstack([direction * 50, rng.standard_normal((3, 200)) * 1e-3])
        rho = svcca_correlation(_acts(a, "a"), _acts(b, "b"), variance_threshold=0.5)
        assert rho == pytest.approx(1.0, abs=1e-6)


def _probe(n=6, size=3, seed=8):
    rng = np.random.default_rng(seed)
    return ProbeSet(
        name="p",
        images=rng.uniform(0, 1, (n, size, 1, 1)),
        sources=tuple(f"i{j}" for j in range(n)),
    )


class TestCollectActivations:
    def test_linear_model_columns_are_outputs(self):
        w = np.array([[1.0, 0.0, 2.0], [0.0, -1.0, 1.0]])
        model = linear_model(w)
        probe = _probe(n=4)
        acts = collect_activations(model, probe)
        assert acts.values.shape == (2, 4)
        for j in range(4):
            np.testing.assert_allclose(
                acts.values[:, j], w @ probe.images[j].reshape(-1), rtol=1e-12
            )

    def test_constant_model_columns_equal_bias(self):
        bias = np.array([0.7, -0.3])
        layers = [LayerSpec("flatten"), LayerSpec("dense", weight=np.zeros((2, 3)), bias=bias)]
        model = make_model("const", layers, width=3, height=1, channels=1)
        acts = collect_activations(model, _probe(n=3))
        for j in range(3):
            np.testing.assert_allclose(acts.values[:, j], bias, rtol=1e-12)


class TestCorrelationMatrix:
    def _nonlinear_model(self, weight, model_id):
        # CCA cannot tell apart linear maps of the same input, so the
        # constructive test needs a nonlinearity after the dense layer
        layers = [
            LayerSpec("flatten"),
            LayerSpec("dense", weight=np.asarray(weight, float)),
            LayerSpec("tanh"),
        ]
        return make_model(model_id, layers, width=weight.shape[1], height=1, channels=1)

    def _models(self):
        rng = np.random.default_rng(9)
        shared = rng.standard_normal((4, 3)) * 2.0
        w_a = np.vstack([shared, rng.standard_normal((2, 3)) * 0.2])
        w_b = np.vstack([shared, rng.standard_normal((2, 3)) * 0.2])
        w_c = rng.standard_normal((6, 3)) * 2.0
        return [
            self._nonlinear_model(w_a, "a"),
            self._nonlinear_model(w_b, "b"),
            self._nonlinear_model(w_c, "c"),
        ]

    def test_single_pair_off_diagonal(self):
        models = self._models()[:2]
        probe = _probe(n=8)
        matrix = correlation_matrix(models, probe)
        acts = [collect_activations(m, probe) for m in models]
        assert matrix.values[0, 1] == pytest.approx(svcca_correlation(acts[0], acts[1]))
        assert matrix.kind == "svcca"
        assert matrix.metadata["variance_threshold"] == 0.99

    def test_duplicated_models_give_all_ones(self):
        base = self._models()[0]
        twin = self._nonlinear_model(base.graph.layers[1].weight, "a2")
        matrix = correlation_matrix([base, twin], _probe(n=8))
        np.testing.assert_allclose(matrix.values, 1.0, atol=1e-6)

    def test_shared_weights_pair_is_most_correlated(self):
        matrix = correlation_matrix(self._models(), _probe(n=10))
        ab = matrix.value("a", "b")
        assert ab > matrix.value("a", "c")
        assert ab > matrix.value("b", "c")

    def test_symmetric_unit_diagonal(self):
        matrix = correlation_matrix(self._models(), _probe(n=8))
        assert np.array_equal(matrix.values, matrix.values.T)
        np.testing.assert_allclose(np.diag(matrix.values), 1.0, atol=1e-9)
