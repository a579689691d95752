"""Retrieval metrics, matrix agreement, task priority, and the CPC.

Rankings are plain mappings {target id: ordered source ids} (self excluded,
best first); adapters accept RankingTable and AffinityMatrix inputs.  P@K and
R@K are macro-averaged over targets, with per-target values exposed so either
averaging can be recovered.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadK,
    EmptyRelevant,
    IdMismatch,
    IncompleteTable,
    ZeroVariance,
)
from .space import AffinityMatrix, RankingTable, rank_all


def as_ranking_dict(oracle):
    """Normalize a RankingTable / AffinityMatrix / mapping to {target: [ids]}."""
    if isinstance(oracle, RankingTable):
        return oracle.to_dict()
    if isinstance(oracle, AffinityMatrix):
        return rank_all(oracle).to_dict()
    return {target: list(sources) for target, sources in oracle.items()}


def precision_at_k(ranking, relevant, k):
    """|top-K intersect relevant| / K."""
    if not 1 <= k <= len(ranking):
        raise BadK(f"K={k} not in [1, {len(ranking)}]")
    hits = sum(1 for source in ranking[:k] if source in relevant)
    return hits / k


def recall_at_k(ranking, relevant, k):
    """|top-K intersect relevant| / |relevant|."""
    if not 1 <= k <= len(ranking):
        raise BadK(f"K={k} not in [1, {len(ranking)}]")
    if not relevant:
        raise EmptyRelevant("relevant set is empty")
    hits = sum(1 for source in ranking[:k] if source in relevant)
    return hits / len(relevant)


def _as_vector(m):
    if isinstance(m, AffinityMatrix):
        return m.off_diagonal_upper()
    return np.asarray(m, dtype=np.float64).reshape(-1)


def _check_ids(m1, m2):
    if isinstance(m1, AffinityMatrix) and isinstance(m2, AffinityMatrix):
        if m1.ids != m2.ids:
            raise IdMismatch(f"matrix ids differ: {m1.ids} vs {m2.ids}")


def pearson(m1, m2):
    """Product-moment correlation; matrices compare their i<j triangles."""
    _check_ids(m1, m2)
    x = _as_vector(m1)
    y = _as_vector(m2)
    if x.shape != y.shape:
        raise IdMismatch(f"length mismatch: {x.shape} vs {y.shape}")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        raise ZeroVariance("pearson undefined for constant input")
    return float((xc @ yc) / denom)


def _average_ranks(x):
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # ties share the mean rank
        i = j + 1
    return ranks


def spearman(m1, m2):
    """Rank correlation with average ranks for ties."""
    _check_ids(m1, m2)
    x = _as_vector(m1)
    y = _as_vector(m2)
    if x.shape != y.shape:
        raise IdMismatch(f"length mismatch: {x.shape} vs {y.shape}")
    return pearson(_average_ranks(x), _average_ranks(y))


def priority(oracle):
    """Mean rank of each source across all other targets (lower = better)."""
    table = as_ranking_dict(oracle)
    ids = sorted(table)
    for target, sources in table.items():
        expected = set(ids) - {target}
        if set(sources) != expected:
            raise IncompleteTable(
                f"target {target!r} must rank exactly the other {len(expected)} models"
            )
    result = {}
    for source in ids:
        ranks = [table[target].index(source) + 1 for target in ids if target != source]
        result[source] = sum(ranks) / len(ranks)
    return result


@dataclass(frozen=True)
class CurvePoints:
    points: tuple  # ordered (x, y) pairs
    xlabel: str
    ylabel: str

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        xs = [x for x, _ in pts]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("curve x values must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def ys(self):
        return [y for _, y in self.points]

    def to_csv(self):
        lines = [f"{self.xlabel},{self.ylabel}"]
        lines += [f"{x:.17g},{y:.17g}" for x, y in self.points]
        return "\n".join(lines) + "\n"


def cpc(correlations, oracle, divide_by_bucket=False):
    """Mean representation correlation as a function of transfer rank.

    For each rank p, sums rho over all ordered (source, target) pairs where
    the source sits at rank p for that target, divided by the number of
    models N (or by the bucket size with divide_by_bucket=True).
    """
    table = as_ranking_dict(oracle)
    ids = sorted(table)
    if set(ids) != set(correlations.ids):
        raise IdMismatch("oracle and correlation matrix cover different models")
    n = len(ids)
    points = []
    for p in range(1, n):
        total = 0.0
        count = 0
        for target in ids:
            sources = table[target]
            if len(sources) < p:
                raise IncompleteTable(f"target {target!r} ranks only {len(sources)} sources")
            source = sources[p - 1]
            total += correlations.value(source, target)
            count += 1
        divisor = count if divide_by_bucket else n
        points.append((p, total / divisor))
    return CurvePoints(tuple(points), xlabel="rank", ylabel="mean_correlation")


@dataclass(frozen=True)
class OracleRelevance:
    """Per-target relevant source sets plus the full oracle ranking."""

    relevant: dict  # target id -> frozenset of source ids
    table: dict  # target id -> ordered source ids
    k_rel: int
    clamped: bool = False  # True when fewer than k_rel sources existed


def build_relevance(oracle, k_rel=5):
    """Relevant set = each target's oracle top-k_rel sources (all, if fewer)."""
    table = as_ranking_dict(oracle)
    clamped = False
    relevant = {}
    for target, sources in table.items():
        if len(sources) < k_rel:
            clamped = True
            relevant[target] = frozenset(sources)
        else:
            relevant[target] = frozenset(sources[:k_rel])
    return OracleRelevance(relevant=relevant, table=table, k_rel=k_rel, clamped=clamped)


def retrieval_curves(estimate, relevance):
    """Macro P@K and R@K curves plus per-target values.

    Returns (precision_curve, recall_curve, per_target) where per_target maps
    each target to its list of (p@k, r@k) for k = 1..N-1.
    """
    table = as_ranking_dict(estimate)
    targets = sorted(relevance.relevant)
    if set(table) != set(targets):
        raise IdMismatch("estimate and relevance cover different targets")
    n_sources = min(len(table[t]) for t in targets)
    per_target = {}
    p_points, r_points = [], []
    for k in range(1, n_sources + 1):
        p_vals, r_vals = [], []
        for target in targets:
            p = precision_at_k(table[target], relevance.relevant[target], k)
            r = recall_at_k(table[target], relevance.relevant[target], k)
            p_vals.append(p)
            r_vals.append(r)
            per_target.setdefault(target, []).append((p, r))
        p_points.append((k, sum(p_vals) / len(p_vals)))
        r_points.append((k, sum(r_vals) / len(r_vals)))
    precision = CurvePoints(tuple(p_points), xlabel="K", ylabel="precision")
    recall = CurvePoints(tuple(r_points), xlabel="K", ylabel="recall")
    return precision, recall, per_target


def load_oracle_file(path):
    """Read an oracle file: either a matrix JSON or a {target: [ids]} ranking."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if isinstance(obj, dict) and "values" in obj and "ids" in obj:
        from .space import matrix_from_json_obj

        return matrix_from_json_obj(obj)
    if not isinstance(obj, dict):
        raise IdMismatch(f"{path}: oracle must be a JSON object")
    return {str(t): [str(s) for s in sources] for t, sources in obj.items()}
