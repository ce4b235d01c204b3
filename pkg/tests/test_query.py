import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdgann import (
    ExactBackend,
    GuaranteePath,
    InvalidArgumentError,
    QueryParams,
    Searcher,
    build_index,
    exact_knn,
    gen_poisson,
    query,
)
from hdgann.core import distances_to
from hdgann.query import answer, answer_radii, descend, loop_bound, navigate
from conftest import poisson_index


class EmptyBackend:
    """A backend that never finds anything."""

    def scan(self, q, k, c, r):
        return None, 0


def center_dist(H, j, q):
    return float(np.linalg.norm(H.nodes[j].center - q))


def test_params_validation():
    for kwargs in ({"k": 0}, {"k": 1, "c": 1.0}, {"k": 1, "delta": 1.0}, {"k": 1, "backend": "kd"}):
        with pytest.raises(InvalidArgumentError):
            QueryParams(**kwargs)


def test_descend_small_n_returns_root():
    H = build_index(gen_poisson(10, 2, seed=1))
    assert descend(H, np.zeros(2), 5) is H.root


def all_stop_paths(H, k):
    """Every root-to-node path that a descent could end on, by exhaustive search."""
    out = []

    def walk(j, path):
        node = H.nodes[j]
        if node.size <= 2 * k:
            out.append(path + [j])
            return
        for c in node.children:
            walk(c, path + [j])

    walk(0, [])
    return out


@pytest.mark.parametrize("corner", [(0, 0), (1, 0), (0, 1), (1, 1)])
def test_descend_exhaustive_paths_eight_points(corner):
    P = np.array([[0.05, 0.02], [0.12, 0.08], [0.9, 0.1], [0.95, 0.03],
                  [0.1, 0.92], [0.03, 0.85], [0.88, 0.93], [0.97, 0.86]])
    H = build_index(P)
    q = np.array(corner, dtype=float)
    # the greedy path is the unique one where each step takes the closest child
    greedy = [
        path for path in all_stop_paths(H, 1)
        if all(
            min(H.nodes[a].children, key=lambda c: (center_dist(H, c, q), c)) == b
            for a, b in zip(path, path[1:])
        )
    ]
    assert len(greedy) == 1
    node = descend(H, q, 1)
    assert node.node_id == greedy[0][-1]
    assert node.size <= 2
    # and it lands in the cluster at the query's corner
    assert np.linalg.norm(H.coords[node.point_ids] - q, axis=1).max() < 0.2


def test_descend_stop_layer_arithmetic():
    H = poisson_index(1024, 2)
    rng = np.random.default_rng(0)
    for q in rng.uniform(size=(20, 2)):
        node = descend(H, q, 10)
        assert 10 <= node.size < 20
        assert node.depth == 6


def test_navigate_fixed_point():
    H = poisson_index(1024, 2)
    q = np.array([0.3, 0.3])
    start = descend(H, q, 10)
    end = navigate(H, start, q)
    assert navigate(H, end, q) is end


def test_navigate_line():
    P = np.column_stack([np.arange(4.0), np.zeros(4)])
    H = build_index(P)
    leaves = H.layers[-1]
    first = min(leaves, key=lambda j: H.nodes[j].center[0])
    last = max(leaves, key=lambda j: H.nodes[j].center[0])
    trace = []
    end = navigate(H, H.nodes[first], np.array([10.0, 0.0]), trace=trace)
    assert end.node_id == last
    assert len(trace) == 4


@given(st.integers(0, 10**6))
def test_navigate_properties(seed):
    H = poisson_index(1024, 2)
    q = np.random.default_rng(seed).uniform(-0.2, 1.2, size=2)
    start = descend(H, q, 10)
    trace = []
    end = navigate(H, start, q, trace=trace)
    dists = [center_dist(H, j, q) for j in trace]
    assert all(a > b for a, b in zip(dists, dists[1:]))
    assert len(set(trace)) == len(trace) <= len(H.layers[start.depth])
    # exhaustive scan of the neighbors confirms a local optimum
    assert all(center_dist(H, m, q) >= dists[-1] for m in end.graph_neighbors)


def test_loop_bound():
    assert loop_bound(1, 2.0) == 0
    assert loop_bound(1024, 2.0) == 10
    assert loop_bound(1025, 2.0) == 11
    assert loop_bound(4096, 1.5) == math.ceil(math.log(4096, 1.5))
    for n in range(2, 300):
        b = loop_bound(n, 1.5)
        assert 1.5 ** b >= n > 1.5 ** (b - 1)


def test_radii_sequence():
    H = poisson_index(256, 2)
    q = np.array([0.2, 0.7])
    node = navigate(H, descend(H, q, 5), q)
    radii = answer_radii(H, node, q, 1.5)
    base = (np.linalg.norm(node.center - q) + node.radius) / H.n
    assert radii[0] == pytest.approx(base, rel=1e-15)
    assert len(radii) == loop_bound(256, 1.5) + 1
    assert all(b == pytest.approx(1.5 * a, rel=1e-12) and b > a for a, b in zip(radii, radii[1:]))


def test_coincident_query():
    H = poisson_index(256, 2)
    q = H.coords[17]
    out = query(H, q, QueryParams(k=1, c=2.0))
    assert out.result_ids.tolist() == [17]
    assert out.guarantee_path == GuaranteePath.RECALL and out.return_loop_index == 0


@given(st.integers(0, 10**6))
def test_distance_path_guarantee(seed):
    H = poisson_index(256, 2)
    q = np.random.default_rng(seed).uniform(size=2)
    params = QueryParams(k=5, c=1.5)
    out = query(H, q, params)
    truth, t_k = exact_knn(H.coords, q, 5)
    assert len(out.result_ids) == 5 == len(set(out.result_ids.tolist()))
    assert out.result_ids.min() >= 0 and out.result_ids.max() < H.n
    if out.return_loop_index > 0:
        assert out.guarantee_path == GuaranteePath.DISTANCE
        assert distances_to(H.coords[out.result_ids], q).max() <= params.c * t_k
    else:
        recall = len(set(truth.tolist()) & set(out.result_ids.tolist())) / 5
        assert 0.0 <= recall <= 1.0


def test_unified_criterion_measured():
    H = poisson_index(1024, 2)
    rng = np.random.default_rng(3)
    params = QueryParams(k=10, c=2.0, delta=0.8)
    searcher = Searcher(H)
    met = 0
    for q in rng.uniform(size=(100, 2)):
        out = searcher.query(q, params)
        truth, t_k = exact_knn(H.coords, q, 10)
        distance_ok = distances_to(H.coords[out.result_ids], q).max() <= params.c * t_k
        recall = len(set(truth.tolist()) & set(out.result_ids.tolist())) / 10
        met += distance_ok or recall >= params.delta
    assert met == 100


def test_single_point_index():
    H = build_index(np.array([[0.5, 0.5]]))
    out = query(H, np.array([3.0, 1.0]), QueryParams(k=1))
    assert out.result_ids.tolist() == [0]


def test_deterministic_queries():
    H = poisson_index(1024, 2)
    q = np.array([0.61, 0.13])
    for backend in ("exact", "lsh"):
        params = QueryParams(k=10, c=2.0, backend=backend)
        a, b = query(H, q, params), query(H, q, params)
        assert np.array_equal(a.result_ids, b.result_ids)
        assert a.return_loop_index == b.return_loop_index and a.stats == b.stats


def test_fallback_when_backend_is_empty():
    H = poisson_index(256, 2)
    q = np.array([0.5, 0.5])
    params = QueryParams(k=5, c=2.0)
    out = query(H, q, params, backend=EmptyBackend())
    assert out.stats.fallback
    assert out.return_loop_index == loop_bound(256, 2.0) + 1
    assert out.stats.backend_calls == loop_bound(256, 2.0) + 2
    assert len(out.result_ids) == 5


def test_bad_queries():
    H = poisson_index(256, 2)
    with pytest.raises(InvalidArgumentError):
        query(H, np.zeros(2), QueryParams(k=257))
    with pytest.raises(InvalidArgumentError):
        query(H, np.zeros(3), QueryParams(k=1))


def test_lsh_query_sound():
    H = poisson_index(1024, 2)
    rng = np.random.default_rng(5)
    searcher = Searcher(H)
    params = QueryParams(k=10, c=2.0, backend="lsh")
    for q in rng.uniform(size=(30, 2)):
        out = searcher.query(q, params)
        assert len(set(out.result_ids.tolist())) == 10
        bound = params.c * out.stats.final_radius
        assert distances_to(H.coords[out.result_ids], q).max() <= bound


def test_answer_with_exact_backend_terminates():
    H = poisson_index(256, 3)
    rng = np.random.default_rng(1)
    for q in rng.uniform(-1, 2, size=(20, 3)):
        node = navigate(H, descend(H, q, 8), q)
        out = answer(H, node, q, QueryParams(k=8, c=1.5), ExactBackend(H.coords))
        assert not out.stats.fallback and out.return_loop_index <= loop_bound(256, 1.5)
