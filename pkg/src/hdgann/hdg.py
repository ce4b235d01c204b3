"""Hierarchical Delaunay graph: balanced split tree + spheres + per-layer triangulations."""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ConfigurationError, Dataset, InvalidArgumentError, Sphere, distances_to
from .delaunay import MAX_DIM, DtGraph, build_delaunay, verify_empty_sphere
from .enclosing import DEFAULT_EPSILON, AmesParams, ames_groups
from .split_tree import build_bmst

log = logging.getLogger(__name__)

MAGIC = b"HDG1"
FORMAT_VERSION = 1
ENCLOSURE_RTOL = 1e-12


class IndexFormatError(ValueError):
    """Malformed or truncated index file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class IndexVersionError(IndexFormatError):
    pass


@dataclass(frozen=True)
class BuildParams:
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0

    def __post_init__(self):
        AmesParams(self.epsilon)


@dataclass
class HdgNode:
    node_id: int
    depth: int
    point_ids: np.ndarray
    center: np.ndarray
    radius: float
    children: tuple = ()
    graph_neighbors: tuple = ()
    parent: int = -1

    @property
    def size(self) -> int:
        return len(self.point_ids)

    @property
    def sphere(self) -> Sphere:
        return Sphere(self.center, self.radius)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(eq=False)
class Hdg:
    coords: np.ndarray
    nodes: list
    layers: list
    layer_simplices: list
    params: BuildParams = field(default_factory=BuildParams)
    flatten_layer: int = 0

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def dataset(self) -> Dataset:
        return Dataset(self.coords, jitter_seed=self.params.seed)

    @property
    def root(self) -> HdgNode:
        return self.nodes[0]

    def layer_centers(self, depth: int) -> np.ndarray:
        return np.array([self.nodes[j].center for j in self.layers[depth]]).reshape(-1, self.dim)

    def layer_graph(self, depth: int) -> DtGraph:
        """The stored triangulation of a layer, with site ``i`` = ``layers[depth][i]``."""
        ids = self.layers[depth]
        local = {nid: i for i, nid in enumerate(ids)}
        simplices = [tuple(sorted(local[v] for v in s)) for s in self.layer_simplices[depth]]
        adjacency = [tuple(sorted(local[v] for v in self.nodes[nid].graph_neighbors if v in local))
                     for nid in ids]
        flat = max((len(s) - 1 for s in simplices), default=0)
        return DtGraph(self.layer_centers(depth), simplices, adjacency, flat_dim=flat)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Hdg):
            return NotImplemented
        if (self.params, self.flatten_layer, self.layers, self.layer_simplices) != \
                (other.params, other.flatten_layer, other.layers, other.layer_simplices):
            return False
        if not np.array_equal(self.coords, other.coords) or len(self.nodes) != len(other.nodes):
            return False
        for a, b in zip(self.nodes, other.nodes):
            if (a.node_id, a.depth, a.children, a.graph_neighbors, a.parent, a.radius) != \
                    (b.node_id, b.depth, b.children, b.graph_neighbors, b.parent, b.radius):
                return False
            if not (np.array_equal(a.point_ids, b.point_ids) and np.array_equal(a.center, b.center)):
                return False
        return True

    __hash__ = None


def build_index(P, params: Optional[BuildParams] = None) -> Hdg:
    """Build the index over ``P`` (a :class:`Dataset` or ``(n, d)`` array).

    Raw input is jittered with ``params.seed`` first; a dataset that already
    carries a jitter seed is used as is. Then: split tree, balancing, one
    approximate enclosing sphere per node, one triangulation per layer.
    """
    params = params or BuildParams()
    data = P if isinstance(P, Dataset) else Dataset(P)
    if not 1 <= data.dim <= MAX_DIM:
        raise ConfigurationError(
            f"index construction supports 1 <= d <= {MAX_DIM}, got d={data.dim}; project the data "
            "to fewer dimensions or query with the exact backend directly")
    if data.jitter_seed is None:
        data = data.jittered(params.seed)
    coords = data.coords

    tree = build_bmst(coords)
    nodes = []
    for depth, ids in enumerate(tree.layers):
        groups = [tree.nodes[j].point_ids for j in ids]
        centers, radii = ames_groups(coords, groups, params.epsilon)
        for row, j in enumerate(ids):
            src = tree.nodes[j]
            nodes.append(HdgNode(j, depth, src.point_ids, centers[row], float(radii[row]),
                                 tuple(src.children), (), -1 if src.parent is None else src.parent))
    nodes.sort(key=lambda node: node.node_id)

    layer_simplices = []
    for depth, ids in enumerate(tree.layers):
        graph = build_delaunay(np.array([nodes[j].center for j in ids]), seed=params.seed + depth)
        if graph.perturbed:
            log.info("layer %d: %d near-degenerate centers perturbed", depth, graph.perturbed)
        for i, nbrs in enumerate(graph.adjacency):
            nodes[ids[i]].graph_neighbors = tuple(sorted(ids[j] for j in nbrs))
        layer_simplices.append(sorted(tuple(sorted(ids[v] for v in s)) for s in graph.simplices))

    return Hdg(coords, nodes, [list(map(int, ids)) for ids in tree.layers], layer_simplices,
               params, tree.flatten_layer or 0)


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)

    def record(self, name: str, failures: list):
        self.checks[name] = (not failures, failures[:10])

    @property
    def ok(self) -> bool:
        return all(passed for passed, _ in self.checks.values())

    def lines(self) -> list:
        out = []
        for name, (passed, failures) in self.checks.items():
            detail = "" if passed else ": " + "; ".join(map(str, failures))
            out.append(f"{'PASS' if passed else 'FAIL'} {name}{detail}")
        return out


def validate_index(H: Hdg, check_delaunay: bool = True) -> ValidationReport:
    """Re-check the structural and geometric invariants of a built index."""
    report = ValidationReport()
    n = H.n
    nodes = H.nodes

    failures = []
    if not np.array_equal(H.root.point_ids, np.arange(n)):
        failures.append("root does not hold exactly the ids 0..n-1")
    if H.root.depth != 0 or H.layers[0] != [0]:
        failures.append("layer 0 is not the single root")
    report.record("root", failures)

    failures = []
    for depth, ids in enumerate(H.layers):
        for j in ids:
            if nodes[j].depth != depth:
                failures.append(f"node {j} listed in layer {depth} has depth {nodes[j].depth}")
        merged = np.sort(np.concatenate([nodes[j].point_ids for j in ids]))
        if not np.array_equal(merged, np.arange(n)):
            failures.append(f"layer {depth} does not partition the point set")
        if depth <= H.flatten_layer and len(ids) != 2 ** depth:
            failures.append(f"layer {depth} has {len(ids)} nodes, expected {2 ** depth}")
    report.record("layers", failures)

    failures = []
    leaf_depths = {node.depth for node in nodes if node.is_leaf}
    expected_depth = 0 if n == 1 else H.flatten_layer + 1
    if leaf_depths != {expected_depth}:
        failures.append(f"leaf depths {sorted(leaf_depths)}, expected {expected_depth}")
    for node in nodes:
        if node.is_leaf and node.size != 1:
            failures.append(f"leaf {node.node_id} holds {node.size} points")
    report.record("leaf_depth", failures)

    failures = []
    for node in nodes:
        if node.is_leaf:
            continue
        parts = [nodes[c].point_ids for c in node.children]
        merged = np.concatenate(parts)
        if len(merged) != node.size or not np.array_equal(np.sort(merged), np.sort(node.point_ids)):
            failures.append(f"node {node.node_id} is not the disjoint union of its children")
        for c in node.children:
            if nodes[c].parent != node.node_id or nodes[c].depth != node.depth + 1:
                failures.append(f"child {c} of node {node.node_id} has inconsistent parent/depth")
    report.record("disjoint_union", failures)

    failures = []
    for node in nodes:
        dist = distances_to(H.coords[node.point_ids], node.center)
        worst = float(dist.max())
        if worst > node.radius * (1.0 + ENCLOSURE_RTOL):
            failures.append(f"node {node.node_id}: point at {worst!r} outside radius {node.radius!r}")
    report.record("sphere_enclosure", failures)

    failures = []
    for node in nodes:
        for m in node.graph_neighbors:
            if node.node_id not in nodes[m].graph_neighbors:
                failures.append(f"edge {node.node_id}->{m} has no reverse")
            if nodes[m].depth != node.depth:
                failures.append(f"edge {node.node_id}->{m} crosses layers")
            if m == node.node_id:
                failures.append(f"self loop at {m}")
    report.record("adjacency_symmetry", failures)

    if check_delaunay:
        failures = []
        for depth in range(len(H.layers)):
            graph = H.layer_graph(depth)
            result = verify_empty_sphere(graph.sites, graph)
            if not result.ok:
                failures.append(f"layer {depth}: {len(result.violations)} violations, "
                                f"bad edges {result.bad_edges[:3]}, {result.problems[:3]}")
        report.record("layer_delaunay", failures)
    return report


# serialization --------------------------------------------------------------

_HEADER = struct.Struct("<4sIIQdqIIi")


def save_index(H: Hdg, sink) -> None:
    """Write ``H`` to a path or binary file object (little-endian, versioned)."""
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, H.dim, H.n, H.params.epsilon, H.params.seed,
                           len(H.nodes), len(H.layers), H.flatten_layer))
    buf.write(np.ascontiguousarray(H.coords, dtype="<f8").tobytes())
    buf.write(np.array([len(ids) for ids in H.layers], dtype="<u4").tobytes())
    for node in H.nodes:
        buf.write(struct.pack("<Iqd", node.depth, node.parent, node.radius))
        buf.write(np.ascontiguousarray(node.center, dtype="<f8").tobytes())
        for seq in (node.point_ids, node.children, node.graph_neighbors):
            buf.write(struct.pack("<I", len(seq)))
            buf.write(np.asarray(seq, dtype="<u4").tobytes())
    for simplices in H.layer_simplices:
        width = len(simplices[0]) if simplices else 0
        buf.write(struct.pack("<II", len(simplices), width))
        buf.write(np.asarray(simplices, dtype="<u4").reshape(-1).tobytes())
    data = buf.getvalue()
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise IndexFormatError(f"truncated file: need {size} bytes, {len(self.data) - self.pos} left",
                                   self.pos)
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.data):
            raise IndexFormatError(f"truncated file: need {size} bytes, {len(self.data) - self.pos} left",
                                   self.pos)
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos)
        self.pos += size
        return out


def load_index(source, expected_dim: Optional[int] = None) -> Hdg:
    """Read an index written by :func:`save_index`."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise IndexFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    magic, version, d, n, epsilon, seed, num_nodes, num_layers, flatten = r.unpack(_HEADER.format)
    if version != FORMAT_VERSION:
        raise IndexVersionError(f"index format version {version} is not supported "
                                f"(this build reads version {FORMAT_VERSION})", 4)
    if expected_dim is not None and d != expected_dim:
        raise IndexFormatError(f"index has dimension {d}, expected {expected_dim}", 8)
    if not 1 <= d <= MAX_DIM or n < 1:
        raise IndexFormatError(f"implausible header d={d} n={n}", 8)
    try:
        params = BuildParams(epsilon, seed)
    except InvalidArgumentError as exc:
        raise IndexFormatError(str(exc), 20) from None
    coords = r.array("<f8", n * d).reshape(n, d).astype(float)
    coords.setflags(write=False)
    sizes = r.array("<u4", num_layers)
    if int(sizes.sum()) != num_nodes:
        raise IndexFormatError("layer sizes do not add up to the node count", r.pos)
    layers, start = [], 0
    for size in sizes:
        layers.append(list(range(start, start + int(size))))
        start += int(size)
    depth_of = np.repeat(np.arange(num_layers), sizes)
    nodes = []
    for node_id in range(num_nodes):
        depth, parent, radius = r.unpack("<Iqd")
        if depth != depth_of[node_id]:
            raise IndexFormatError(f"node {node_id} depth {depth} disagrees with layer table", r.pos)
        center = r.array("<f8", d).astype(float)
        seqs = []
        for _ in range(3):
            (count,) = r.unpack("<I")
            seqs.append(r.array("<u4", count))
        point_ids = seqs[0].astype(np.int64)
        if point_ids.size and point_ids.max() >= n:
            raise IndexFormatError(f"node {node_id} references a point id >= n", r.pos)
        nodes.append(HdgNode(node_id, depth, point_ids, center, radius,
                             tuple(int(c) for c in seqs[1]), tuple(int(m) for m in seqs[2]), parent))
    layer_simplices = []
    for _ in range(num_layers):
        count, width = r.unpack("<II")
        flat = r.array("<u4", count * width).reshape(count, width)
        layer_simplices.append([tuple(int(v) for v in row) for row in flat])
    if r.pos != len(data):
        raise IndexFormatError(f"{len(data) - r.pos} trailing bytes after index data", r.pos)
    return Hdg(coords, nodes, layers, layer_simplices, params, flatten)
