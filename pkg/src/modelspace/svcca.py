"""Representation-similarity baseline via SVD-truncated CCA.

Each model's responses to the probe form a (D neurons x N samples) activation
matrix.  Rows are mean-centered, an SVD keeps the smallest leading subspace
explaining at least `variance_threshold` of the squared singular mass, and
the mean canonical correlation between the two reduced subspaces is the
similarity score.  Since centered data whitens to its right-singular rows,
the canonical correlations are just the singular values of V1 @ V2.T.
"""

from dataclasses import dataclass

import numpy as np

from .bundle import preprocess
from .errors import DegenerateSubspace, ProbeMismatch
from .graph import forward
from .space import KIND_SVCCA, AffinityMatrix

DEFAULT_VARIANCE_THRESHOLD = 0.99


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    model_id: str
    values: np.ndarray  # (D, N) float64
    probe_checksum: str

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("activation matrix must be 2-d (neurons x samples)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def collect_activations(model, probe):
    """Column j holds the representation of probe image j."""
    values = np.empty((model.dim, len(probe)))
    for j in range(len(probe)):
        x = preprocess(model.preproc, probe.images[j])
        rep, _ = forward(model.graph, x)
        values[:, j] = rep.reshape(-1)
    return ActivationMatrix(model_id=model.model_id, values=values, probe_checksum=probe.checksum)


def _reduced_basis(values, threshold, where):
    centered = values - values.mean(axis=1, keepdims=True)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    squared = s * s
    total = squared.sum()
    if total <= 0.0:
        raise DegenerateSubspace(f"{where}: all activations are constant")
    cumulative = np.cumsum(squared) / total
    keep = int(np.searchsorted(cumulative, threshold - 1e-12) + 1)
    # never keep directions with (numerically) zero variance
    nonzero = int(np.sum(s > s[0] * 1e-12))
    keep = max(1, min(keep, nonzero))
    return vt[:keep]


def svcca_correlation(act_a, act_b, variance_threshold=DEFAULT_VARIANCE_THRESHOLD):
    """Mean canonical correlation between two models' activation subspaces."""
    if act_a.probe_checksum != act_b.probe_checksum:
        raise ProbeMismatch(f"{act_a.model_id} and {act_b.model_id} saw different probes")
    if act_a.values.shape[1] != act_b.values.shape[1] or act_a.values.shape[1] < 2:
        raise ProbeMismatch("activation matrices need the same sample count, at least 2")
    if not 0.0 < variance_threshold <= 1.0:
        raise ValueError(f"variance threshold must be in (0, 1], got {variance_threshold}")
    va = _reduced_basis(act_a.values, variance_threshold, act_a.model_id)
    vb = _reduced_basis(act_b.values, variance_threshold, act_b.model_id)
    correlations = np.linalg.svd(va @ vb.T, compute_uv=False)
    correlations = np.clip(correlations, 0.0, 1.0)
    return float(correlations.mean())


def correlation_matrix(models, probe, variance_threshold=DEFAULT_VARIANCE_THRESHOLD):
    """Pairwise SVCCA similarities over a model list (symmetric, unit diagonal)."""
    if len(models) < 2:
        raise ValueError("need at least two models")
    activations = [collect_activations(m, probe) for m in models]
    n = len(models)
    values = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            rho = svcca_correlation(activations[i], activations[j], variance_threshold)
            values[i, j] = rho
            values[j, i] = rho
    metadata = {
        "variance_threshold": variance_threshold,
        "probe_checksum": probe.checksum,
        "n_images": len(probe),
    }
    return AffinityMatrix(tuple(m.model_id for m in models), values, KIND_SVCCA, metadata)
