"""Agglomerative hierarchical clustering of the model affinity matrix.

Bottom-up merging with average (default), single, or complete linkage via
Lance-Williams updates.  Ties break on the lexicographically smallest pair of
cluster representatives (a cluster's representative is its smallest leaf id),
so the tree is independent of input order.  Node heights are the linkage
distance at the merge; Newick branch lengths are parent height minus child
height.
"""

from dataclasses import dataclass

import numpy as np

from .errors import TooFewModels
from .space import KIND_DISTANCE

LINKAGES = ("average", "single", "complete")


@dataclass(frozen=True, eq=False)
class DendroNode:
    height: float
    leaf: str | None = None
    left: "DendroNode | None" = None
    right: "DendroNode | None" = None

    @property
    def is_leaf(self):
        return self.leaf is not None

    @property
    def leaves(self):
        if self.is_leaf:
            return (self.leaf,)
        return self.left.leaves + self.right.leaves

    @property
    def leftmost(self):
        return self.leaf if self.is_leaf else self.left.leftmost


@dataclass(frozen=True, eq=False)
class Dendrogram:
    root: DendroNode
    linkage: str
    replaced_infinite: int = 0  # +inf distances substituted before clustering

    @property
    def n_leaves(self):
        return len(self.root.leaves)


def _ordered(a, b):
    # children sorted by leftmost leaf so rendering is deterministic
    return (a, b) if a.leftmost <= b.leftmost else (b, a)


def agglomerate(matrix, linkage="average"):
    """Cluster a distance-kind matrix into a full merge tree."""
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    if matrix.kind != KIND_DISTANCE:
        raise ValueError("clustering expects a distance-kind matrix (use to_distance())")
    n = len(matrix.ids)
    if n < 2:
        raise TooFewModels(f"clustering needs at least 2 models, got {n}")

    values = np.array(matrix.values, dtype=np.float64)
    off_diag = values[~np.eye(n, dtype=bool)]
    finite = off_diag[np.isfinite(off_diag)]
    replaced = int(np.sum(~np.isfinite(off_diag)) // 2)
    if replaced:
        if finite.size == 0:
            raise TooFewModels("no finite distances to cluster")
        values = np.where(np.isfinite(values), values, 10.0 * finite.max())

    # cluster state keyed by representative (smallest leaf id)
    nodes = {mid: DendroNode(height=0.0, leaf=mid) for mid in matrix.ids}
    sizes = {mid: 1 for mid in matrix.ids}
    dist = {}
    for i, a in enumerate(matrix.ids):
        for j in range(i + 1, n):
            b = matrix.ids[j]
            key = (min(a, b), max(a, b))
            dist[key] = float(values[i, j])

    while len(nodes) > 1:
        (d, a, b) = min((d, k[0], k[1]) for k, d in dist.items())
        left, right = _ordered(nodes[a], nodes[b])
        merged = DendroNode(height=d, left=left, right=right)
        rep = min(a, b)
        others = [r for r in nodes if r not in (a, b)]
        for other in others:
            da = dist.pop((min(a, other), max(a, other)))
            db = dist.pop((min(b, other), max(b, other)))
            if linkage == "average":
                nd = (sizes[a] * da + sizes[b] * db) / (sizes[a] + sizes[b])
            elif linkage == "single":
                nd = min(da, db)
            else:
                nd = max(da, db)
            dist[(min(rep, other), max(rep, other))] = nd
        dist.pop((min(a, b), max(a, b)))
        sizes[rep] = sizes.pop(a) + sizes.pop(b)
        del nodes[a], nodes[b]
        nodes[rep] = merged

    return Dendrogram(root=next(iter(nodes.values())), linkage=linkage, replaced_infinite=replaced)


def cut(dendrogram, n_clusters):
    """Leaf groups obtained by undoing the highest merges until n_clusters remain."""
    n = dendrogram.n_leaves
    if not 1 <= n_clusters <= n:
        raise TooFewModels(f"cannot cut a {n}-leaf tree into {n_clusters} clusters")
    active = [dendrogram.root]
    while len(active) < n_clusters:
        # split the highest node; ties break on leftmost leaf for determinism
        idx = max(
            (i for i, node in enumerate(active) if not node.is_leaf),
            key=lambda i: (active[i].height, active[i].leftmost),
        )
        node = active.pop(idx)
        active.extend([node.left, node.right])
    return sorted((frozenset(node.leaves) for node in active), key=min)


_NEWICK_FORBIDDEN = set("():,; \t\n")


def _fmt(v):
    return f"{v:.17g}"


def _newick_node(node, parent_height):
    if node.is_leaf:
        if _NEWICK_FORBIDDEN & set(node.leaf):
            raise ValueError(f"leaf id {node.leaf!r} contains newick delimiters")
        return f"{node.leaf}:{_fmt(parent_height)}"
    inner = f"({_newick_node(node.left, node.height)},{_newick_node(node.right, node.height)})"
    return f"{inner}:{_fmt(parent_height - node.height)}"


def to_newick(dendrogram):
    root = dendrogram.root if isinstance(dendrogram, Dendrogram) else dendrogram
    if root.is_leaf:
        return f"{root.leaf};"
    left = _newick_node(root.left, root.height)
    right = _newick_node(root.right, root.height)
    return f"({left},{right});"


def parse_newick(text):
    """Parse a tree emitted by to_newick back into a DendroNode.

    Heights are reconstructed bottom-up from branch lengths (leaves at 0).
    """
    text = text.strip()
    if not text.endswith(";"):
        raise ValueError("newick string must end with ';'")
    s = text[:-1]
    pos = 0

    def parse_node():
        nonlocal pos
        if s[pos] == "(":
            pos += 1
            left, left_branch = parse_clade()
            if s[pos] != ",":
                raise ValueError(f"expected ',' at {pos}")
            pos += 1
            right, right_branch = parse_clade()
            if s[pos] != ")":
                raise ValueError(f"expected ')' at {pos}")
            pos += 1
            height = left.height + left_branch
            node_left, node_right = _ordered(left, right)
            return DendroNode(height=height, left=node_left, right=node_right)
        start = pos
        while pos < len(s) and s[pos] not in _NEWICK_FORBIDDEN:
            pos += 1
        return DendroNode(height=0.0, leaf=s[start:pos])

    def parse_clade():
        nonlocal pos
        node = parse_node()
        if pos < len(s) and s[pos] == ":":
            pos += 1
            start = pos
            while pos < len(s) and s[pos] not in "(),:;":
                pos += 1
            return node, float(s[start:pos])
        return node, 0.0

    root = parse_node()
    if pos != len(s):
        raise ValueError(f"trailing newick content at {pos}")
    return root


def render_text(dendrogram):
    """Indented terminal rendering of the merge tree."""
    root = dendrogram.root if isinstance(dendrogram, Dendrogram) else dendrogram
    lines = []

    def walk(node, prefix, connector):
        label = node.leaf if node.is_leaf else f"[h={node.height:.6g}]"
        lines.append(f"{prefix}{connector}{label}")
        if not node.is_leaf:
            extension = "   " if connector in ("", "`- ") else "|  "
            walk(node.left, prefix + extension, "|- ")
            walk(node.right, prefix + extension, "`- ")

    walk(root, "", "")
    return "\n".join(lines) + "\n"
