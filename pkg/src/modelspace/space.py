"""Model space: attribution sets as points, ranked by cosine-based distance.

The distance between two models over a probe of size N is

    d = N / sum_k cos(map_k_model_a, map_k_model_b)

which equals the reciprocal of the mean per-image cosine similarity.  The
matrix stores the mean similarity and derives distances on demand; both are
exportable.  A non-positive or vanishing cosine sum has no defined distance
and maps to +inf, which ranking treats as worst.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MethodMismatch, ProbeMismatch, ShapeMismatch, UnknownModel

_NORM_FLOOR = 1e-12
_SUM_FLOOR = 1e-9

KIND_SIMILARITY = "similarity"
KIND_DISTANCE = "distance"
KIND_SVCCA = "svcca"


def cosine_similarity(a, b):
    """cos(a, b) in [-1, 1]; 0.0 when either vector is (near) zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch("cosine_similarity", a.shape, b.shape)
    av = a.reshape(-1)
    bv = b.reshape(-1)
    na = math.sqrt(float(av @ av))
    nb = math.sqrt(float(bv @ bv))
    if na < _NORM_FLOOR or nb < _NORM_FLOOR:
        return 0.0
    return float(av @ bv) / (na * nb)


def _check_compatible(set_a, set_b):
    if set_a.probe_checksum != set_b.probe_checksum or len(set_a) != len(set_b):
        raise ProbeMismatch(
            f"{set_a.model_id} and {set_b.model_id} were attributed on different probes"
        )
    if set_a.method != set_b.method or set_a.epsilon != set_b.epsilon:
        raise MethodMismatch(
            f"{set_a.model_id} ({set_a.method}, eps={set_a.epsilon}) vs "
            f"{set_b.model_id} ({set_b.method}, eps={set_b.epsilon})"
        )


def _cosine_sum(set_a, set_b):
    total = 0.0
    degenerate = 0
    for k in range(len(set_a)):
        ca = cosine_similarity(set_a.maps[k], set_b.maps[k])
        if ca == 0.0:
            na = np.linalg.norm(set_a.maps[k])
            nb = np.linalg.norm(set_b.maps[k])
            if na < _NORM_FLOOR or nb < _NORM_FLOOR:
                degenerate += 1
        total += ca
    return total, degenerate


def distance(set_a, set_b):
    """Reciprocal mean-cosine distance; +inf when the cosine sum vanishes."""
    _check_compatible(set_a, set_b)
    total, _ = _cosine_sum(set_a, set_b)
    if total <= _SUM_FLOOR:
        return math.inf
    return len(set_a) / total


def mean_similarity(set_a, set_b):
    """Mean per-image cosine similarity (the quantity the matrix stores)."""
    _check_compatible(set_a, set_b)
    total, degenerate = _cosine_sum(set_a, set_b)
    return total / len(set_a), degenerate


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    """Symmetric pairwise model matrix (similarity, distance, or svcca)."""

    ids: tuple[str, ...]
    values: np.ndarray  # (N, N) float64
    kind: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        n = len(self.ids)
        if values.shape != (n, n):
            raise ShapeMismatch("affinity values", (n, n), values.shape)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def index_of(self, model_id):
        try:
            return self.ids.index(model_id)
        except ValueError:
            raise UnknownModel(f"{model_id!r} is not in the matrix") from None

    def value(self, id_a, id_b):
        return float(self.values[self.index_of(id_a), self.index_of(id_b)])

    def to_distance(self, transform="reciprocal"):
        """Distance-kind view of a similarity/svcca matrix."""
        if self.kind == KIND_DISTANCE:
            return self
        if transform == "reciprocal":
            n_images = self.metadata.get("n_images", 1)
            floor = _SUM_FLOOR / n_images
            with np.errstate(divide="ignore"):
                vals = np.where(self.values > floor, 1.0 / self.values, math.inf)
        elif transform == "one-minus":
            vals = 1.0 - self.values
        else:
            raise ValueError(f"unknown dissimilarity transform {transform!r}")
        return AffinityMatrix(self.ids, vals, KIND_DISTANCE, dict(self.metadata))

    def to_similarity(self):
        """Similarity-kind view; +inf distances collapse to similarity 0."""
        if self.kind != KIND_DISTANCE:
            return self
        with np.errstate(divide="ignore"):
            vals = np.where(np.isfinite(self.values), 1.0 / self.values, 0.0)
        return AffinityMatrix(self.ids, vals, KIND_SIMILARITY, dict(self.metadata))

    def off_diagonal_upper(self):
        """Upper-triangle (i<j) values in fixed row-major order."""
        n = len(self.ids)
        iu = np.triu_indices(n, k=1)
        return self.values[iu]


def affinity_matrix(sets, metadata=None):
    """Mean-similarity matrix over attribution sets (symmetric by construction)."""
    if len(sets) < 2:
        raise ValueError("need at least two attribution sets")
    ids = [s.model_id for s in sets]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate model ids in attribution sets")
    n = len(sets)
    values = np.empty((n, n))
    flagged = []
    for i in range(n):
        for j in range(i, n):
            s, degenerate = mean_similarity(sets[i], sets[j])
            values[i, j] = s
            values[j, i] = s
            if degenerate:
                flagged.append([ids[i], ids[j], degenerate])
    meta = dict(metadata or {})
    meta.setdefault("method", sets[0].method)
    meta.setdefault("epsilon", sets[0].epsilon)
    meta.setdefault("probe_checksum", sets[0].probe_checksum)
    meta.setdefault("n_images", len(sets[0]))
    if flagged:
        meta["degenerate_pairs"] = flagged
    return AffinityMatrix(tuple(ids), values, KIND_SIMILARITY, meta)


def insert_model(matrix, new_id, similarities, self_similarity=1.0):
    """Grow a similarity matrix by one model given its row of mean similarities."""
    if matrix.kind not in (KIND_SIMILARITY, KIND_SVCCA):
        raise ValueError("insertion operates on the similarity-kind matrix")
    if new_id in matrix.ids:
        raise ValueError(f"{new_id!r} already present")
    n = len(matrix.ids)
    values = np.empty((n + 1, n + 1))
    values[:n, :n] = matrix.values
    row = np.array([similarities[mid] for mid in matrix.ids])
    values[n, :n] = row
    values[:n, n] = row
    values[n, n] = self_similarity
    return AffinityMatrix(matrix.ids + (new_id,), values, matrix.kind, dict(matrix.metadata))


@dataclass(frozen=True, eq=False)
class RankingTable:
    """Per-target ordered source lists; ranks start at 1."""

    rows: dict  # target id -> tuple of (source id, value), best first

    def ranked_ids(self, target):
        if target not in self.rows:
            raise UnknownModel(f"{target!r} is not in the ranking table")
        return [source for source, _ in self.rows[target]]

    def rank_of(self, target, source):
        for position, (candidate, _) in enumerate(self.rows[target], start=1):
            if candidate == source:
                return position
        raise UnknownModel(f"{source!r} not ranked for target {target!r}")

    def to_dict(self):
        return {target: [s for s, _ in row] for target, row in self.rows.items()}


def rank_sources(matrix, target):
    """Sources ordered best-first for a target; ties break on ascending id.

    Distance matrices rank ascending (small = close); similarity and svcca
    matrices rank descending.  +inf distances always land last.
    """
    t = matrix.index_of(target)
    entries = []
    for i, mid in enumerate(matrix.ids):
        if mid == target:
            continue
        v = float(matrix.values[t, i])
        sort_value = v if matrix.kind == KIND_DISTANCE else -v
        entries.append((sort_value, mid, v))
    entries.sort(key=lambda e: (e[0], e[1]))
    return [(mid, v) for _, mid, v in entries]


def rank_all(matrix):
    return RankingTable({target: tuple(rank_sources(matrix, target)) for target in matrix.ids})


# --- export ---------------------------------------------------------------


def _fmt(v):
    return f"{v:.17g}"


def matrix_to_csv(matrix, extra_comments=None):
    """CSV text: '#' metadata comments, a header row of ids, then value rows."""
    lines = []
    for key, value in (extra_comments or {}).items():
        lines.append(f"# {key}={value}")
    lines.append(f"# kind={matrix.kind}")
    lines.append("id," + ",".join(matrix.ids))
    for i, mid in enumerate(matrix.ids):
        lines.append(mid + "," + ",".join(_fmt(v) for v in matrix.values[i]))
    return "\n".join(lines) + "\n"


def matrix_to_json_obj(matrix):
    return {
        "ids": list(matrix.ids),
        "kind": matrix.kind,
        "metadata": matrix.metadata,
        "values": [[v for v in row] for row in matrix.values.tolist()],
    }


def matrix_from_json_obj(obj):
    return AffinityMatrix(
        ids=tuple(obj["ids"]),
        values=np.array(obj["values"], dtype=np.float64),
        kind=obj["kind"],
        metadata=dict(obj.get("metadata", {})),
    )


def write_matrix_json(matrix, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(matrix_to_json_obj(matrix), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_matrix_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return matrix_from_json_obj(json.load(fh))
