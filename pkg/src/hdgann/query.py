"""Three-step search over a built index: descend, navigate, answer.

The answer step asks a (c,r)-kNN backend with radii growing by ``c`` from
``(D(q, center) + radius) / n``. A reply at the first radius carries only the
probabilistic recall guarantee; a reply at any later radius follows an empty
reply one step earlier, so every returned point lies within ``c * T_k(q)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import InvalidArgumentError, as_coords, distance, exact_crknn
from .crknn import ExactBackend, LshBackend
from .hdg import Hdg, HdgNode


class GuaranteePath(str, enum.Enum):
    RECALL = "recall"
    DISTANCE = "distance"


@dataclass(frozen=True)
class QueryParams:
    k: int
    c: float = 2.0
    delta: float = 0.8
    backend: str = "exact"

    def __post_init__(self):
        if self.k < 1:
            raise InvalidArgumentError(f"k must be >= 1, got {self.k}")
        if not self.c > 1:
            raise InvalidArgumentError(f"c must be > 1, got {self.c}")
        if not 0 < self.delta < 1:
            raise InvalidArgumentError(f"delta must lie in (0, 1), got {self.delta}")
        if self.backend not in ("exact", "lsh"):
            raise InvalidArgumentError(f"unknown backend {self.backend!r}")


@dataclass
class QueryStats:
    descent_visits: int = 0
    navigation_visits: int = 0
    backend_calls: int = 0
    candidates_scanned: int = 0
    stop_node: int = -1
    final_radius: float = 0.0
    fallback: bool = False


@dataclass
class QueryOutcome:
    result_ids: np.ndarray
    return_loop_index: int
    stats: QueryStats = field(default_factory=QueryStats)

    @property
    def guarantee_path(self) -> GuaranteePath:
        return GuaranteePath.RECALL if self.return_loop_index == 0 else GuaranteePath.DISTANCE


def _center_distance(node: HdgNode, q: np.ndarray) -> float:
    return distance(node.center, q)


def descend(H: Hdg, q, k: int, stats: Optional[QueryStats] = None) -> HdgNode:
    """Walk down from the root toward the closest child center until ``|N| <= 2k``.

    Flattened nodes may have up to four children. Ties go to the lower node
    id, which for a binary split is the left child.
    """
    q = as_coords(q)
    node = H.root
    visits = 1
    while node.size > 2 * k:
        kids = [H.nodes[c] for c in node.children]
        node = min(kids, key=lambda child: (_center_distance(child, q), child.node_id))
        visits += 1
    if stats is not None:
        stats.descent_visits = visits
    return node


def navigate(H: Hdg, start: HdgNode, q, stats: Optional[QueryStats] = None,
             trace: Optional[list] = None) -> HdgNode:
    """Greedy descent over the layer graph to a node whose center is locally closest.

    Every step moves to the closest neighbor (ties to the lower id) and only
    on strict improvement. Visited node ids are appended to ``trace`` if given.
    """
    q = as_coords(q)
    node = start
    best = _center_distance(node, q)
    visits = 1
    if trace is not None:
        trace.append(node.node_id)
    while True:
        candidates = [(_center_distance(H.nodes[m], q), m) for m in node.graph_neighbors]
        if not candidates:
            break
        dist, m = min(candidates)
        if not dist < best:
            break
        node, best = H.nodes[m], dist
        visits += 1
        if trace is not None:
            trace.append(m)
    if stats is not None:
        stats.navigation_visits = visits
    return node


def loop_bound(n: int, c: float) -> int:
    """``ceil(log_c n)``, computed so that ``c**bound >= n`` holds exactly."""
    if n <= 1:
        return 0
    bound = math.ceil(math.log(n) / math.log(c) - 1e-12)
    while c ** bound < n:
        bound += 1
    return bound


def answer_radii(H: Hdg, node: HdgNode, q, c: float) -> list:
    base = (_center_distance(node, as_coords(q)) + node.radius) / H.n
    return [base * c ** i for i in range(loop_bound(H.n, c) + 1)]


def answer(H: Hdg, node: HdgNode, q, params: QueryParams, backend,
           stats: Optional[QueryStats] = None) -> QueryOutcome:
    """Call the backend at growing radii; the first non-empty reply is the result.

    If every call comes back empty (only possible with a probabilistic
    backend) one more call is made at the stop node's bounding radius, and
    failing that the exact scan answers it; ``stats.fallback`` records this.
    """
    q = as_coords(q)
    if params.k > H.n:
        raise InvalidArgumentError(f"k={params.k} exceeds the number of points n={H.n}")
    stats = stats or QueryStats()
    stats.stop_node = node.node_id
    radii = answer_radii(H, node, q, params.c)
    for i, r in enumerate(radii):
        ids, scanned = backend.scan(q, params.k, params.c, r)
        stats.backend_calls += 1
        stats.candidates_scanned += scanned
        if ids is not None:
            stats.final_radius = r
            return QueryOutcome(np.asarray(ids, dtype=np.int64), i, stats)
    # the stop node's points all lie within this radius of q
    bounding = _center_distance(node, q) + node.radius
    ids, scanned = backend.scan(q, params.k, params.c, bounding)
    stats.backend_calls += 1
    stats.candidates_scanned += scanned
    if ids is None:
        ids = exact_crknn(H.coords, q, params.k, params.c, bounding)
        stats.candidates_scanned += H.n
        stats.fallback = True
    stats.final_radius = bounding
    return QueryOutcome(np.asarray(ids, dtype=np.int64), len(radii), stats)


def make_backend(H: Hdg, kind: str, c: float):
    if kind == "exact":
        return ExactBackend(H.coords)
    if kind == "lsh":
        return LshBackend(H.coords, c, base_radius=2.0 * H.root.radius, seed=H.params.seed)
    raise InvalidArgumentError(f"unknown backend {kind!r}")


def query(H: Hdg, q, params: QueryParams, backend=None) -> QueryOutcome:
    """Full search for the ``params.k`` approximate nearest neighbors of ``q``."""
    q = as_coords(q)
    if q.shape != (H.dim,):
        raise InvalidArgumentError(f"query has shape {q.shape}, index dimension is {H.dim}")
    if params.k > H.n:
        raise InvalidArgumentError(f"k={params.k} exceeds the number of points n={H.n}")
    backend = backend or make_backend(H, params.backend, params.c)
    stats = QueryStats()
    node = descend(H, q, params.k, stats)
    node = navigate(H, node, q, stats)
    return answer(H, node, q, params, backend, stats)


class Searcher:
    """An index plus cached backends, for running many queries."""

    def __init__(self, H: Hdg):
        self.H = H
        self._backends: dict = {}

    def backend(self, kind: str, c: float):
        key = (kind, float(c))
        if key not in self._backends:
            self._backends[key] = make_backend(self.H, kind, c)
        return self._backends[key]

    def query(self, q, params: QueryParams) -> QueryOutcome:
        return query(self.H, q, params, self.backend(params.backend, params.c))
