"""Median split trees and their balanced (uniform leaf depth) form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Dataset, InvalidArgumentError


@dataclass(frozen=True)
class Box:
    """Axis-parallel box given by per-dimension ``lower``/``upper`` bounds."""

    lower: np.ndarray
    upper: np.ndarray

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.lower, self.upper)]

    @property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.lower <= x) and np.all(x <= self.upper))


@dataclass
class MstNode:
    node_id: int
    depth: int
    point_ids: np.ndarray
    split_dim: Optional[int] = None
    split_value: Optional[float] = None
    children: tuple = ()
    parent: Optional[int] = None

    @property
    def size(self) -> int:
        return len(self.point_ids)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def left(self) -> Optional[int]:
        return self.children[0] if self.children else None

    @property
    def right(self) -> Optional[int]:
        return self.children[1] if len(self.children) > 1 else None


@dataclass
class SplitTree:
    """Nodes stored depth-major; ``layers[i]`` lists the node ids at depth ``i``."""

    n: int
    nodes: list = field(default_factory=list)
    layers: list = field(default_factory=list)
    balanced: bool = False
    flatten_layer: Optional[int] = None

    @property
    def root(self) -> MstNode:
        return self.nodes[0]

    @property
    def leaf_depth(self) -> int:
        return len(self.layers) - 1

    def layer(self, i: int) -> list:
        return [self.nodes[j] for j in self.layers[i]]

    def leaves(self) -> list:
        return [node for node in self.nodes if node.is_leaf]

    def subtree_leaf_ids(self, node_id: int) -> list:
        """Point ids of the leaves below ``node_id``, left to right."""
        out, stack = [], [node_id]
        while stack:
            node = self.nodes[stack.pop()]
            if node.is_leaf:
                out.extend(int(i) for i in node.point_ids)
            else:
                stack.extend(reversed(node.children))
        return out


def _coords(P) -> np.ndarray:
    return P.coords if isinstance(P, Dataset) else np.asarray(P, dtype=float)


def mbb(coords, ids=None) -> Box:
    """Tight bounding box of ``coords[ids]`` (all rows when ``ids`` is None)."""
    pts = _coords(coords)
    if ids is not None:
        pts = pts[np.asarray(ids, dtype=np.int64)]
    if len(pts) == 0:
        raise InvalidArgumentError("bounding box of an empty set")
    return Box(pts.min(axis=0), pts.max(axis=0))


def median_split(coords, ids):
    """Split ``ids`` at the median of the longest bounding-box dimension.

    Returns ``(lower_ids, upper_ids, split_dim, split_value)``. The lower part
    receives the ``ceil(m/2)`` smallest coordinates, ``split_value`` being the
    largest of them; both parts come back sorted by id.
    """
    pts = _coords(coords)
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) < 2:
        raise InvalidArgumentError(f"median split needs at least 2 points, got {len(ids)}")
    sub = pts[ids]
    dim = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
    vals = sub[:, dim]
    half = (len(ids) + 1) // 2
    part = np.argpartition(vals, half - 1)
    lower, upper = part[:half], part[half:]
    split_value = float(vals[lower].max())
    return np.sort(ids[lower]), np.sort(ids[upper]), dim, split_value


def build_mst(P) -> SplitTree:
    """Recursively median-split down to singleton leaves, one layer at a time."""
    pts = _coords(P)
    n = len(pts)
    if n < 1:
        raise InvalidArgumentError("cannot build a tree over zero points")
    tree = SplitTree(n=n)
    tree.nodes.append(MstNode(0, 0, np.arange(n, dtype=np.int64)))
    tree.layers.append([0])
    while True:
        frontier = [tree.nodes[j] for j in tree.layers[-1] if tree.nodes[j].size > 1]
        if not frontier:
            break
        next_layer = []
        for node in frontier:
            lo, hi, dim, value = median_split(pts, node.point_ids)
            kids = []
            for part in (lo, hi):
                child = MstNode(len(tree.nodes), node.depth + 1, part, parent=node.node_id)
                tree.nodes.append(child)
                kids.append(child.node_id)
            node.split_dim, node.split_value, node.children = dim, value, tuple(kids)
            next_layer.extend(kids)
        tree.layers.append(next_layer)
    return tree


def flatten_depth(n: int) -> int:
    """Smallest ``i`` with ``floor(n / 2**i) <= 3``."""
    i = 0
    while n >> i > 3:
        i += 1
    return i


def balance_to_bmst(tree: SplitTree) -> SplitTree:
    """Attach every subtree leaf directly to its layer-``i`` ancestor.

    ``i`` is :func:`flatten_depth`; interior nodes below layer ``i`` are
    dropped so that all leaves sit at depth ``i + 1`` (or the tree is the bare
    root when ``n == 1``).
    """
    if tree.balanced:
        return tree
    i = flatten_depth(tree.n)
    out = SplitTree(n=tree.n, balanced=True, flatten_layer=i)
    for depth in range(i + 1):
        out.layers.append(list(tree.layers[depth]))
        for j in tree.layers[depth]:
            src = tree.nodes[j]
            node = MstNode(src.node_id, src.depth, src.point_ids, src.split_dim, src.split_value,
                           src.children if depth < i else (), src.parent)
            out.nodes.append(node)
    if tree.n == 1:
        return out
    leaf_layer = []
    for j in tree.layers[i]:
        parent = out.nodes[j]
        kids = []
        for pid in tree.subtree_leaf_ids(j):
            leaf = MstNode(len(out.nodes), i + 1, np.array([pid], dtype=np.int64), parent=j)
            out.nodes.append(leaf)
            kids.append(leaf.node_id)
        parent.children = tuple(kids)
        parent.split_dim = parent.split_value = None
        leaf_layer.extend(kids)
    out.layers.append(leaf_layer)
    return out


def build_bmst(P) -> SplitTree:
    return balance_to_bmst(build_mst(P))
