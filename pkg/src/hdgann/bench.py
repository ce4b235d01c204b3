"""Synthetic Poisson data and the recall / distance-ratio benchmark harness."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .core import Dataset, InvalidArgumentError, distances_to, exact_knn
from .delaunay import MAX_DIM
from .hdg import Hdg
from .query import QueryParams, Searcher

RECORD_FIELDS = (
    "query_id", "return_loop_index", "guarantee_path", "recall", "distance_ratio",
    "distance_ok", "recall_ok", "descent_visits", "navigation_visits", "backend_calls",
    "candidates_scanned", "fallback",
)
REPORT_DELTAS = (0.5, 0.8)


def gen_poisson(n: int, d: int, side: float = 1.0, seed: int = 0) -> Dataset:
    """A homogeneous Poisson process on ``[0, side]^d`` conditioned on ``n`` points.

    Conditioned on the count, the points are i.i.d. uniform over the cube.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    if not 1 <= d <= MAX_DIM:
        raise InvalidArgumentError(f"d must lie in [1, {MAX_DIM}], got {d}")
    if not side > 0:
        raise InvalidArgumentError(f"side must be > 0, got {side}")
    rng = np.random.default_rng(seed)
    return Dataset(rng.uniform(0.0, side, size=(n, d)))


def cell_counts(coords: np.ndarray, cells_per_axis: int, side: float = 1.0) -> np.ndarray:
    """Point counts over a regular grid of ``cells_per_axis ** d`` equal cells."""
    idx = np.clip((coords / side * cells_per_axis).astype(np.int64), 0, cells_per_axis - 1)
    flat = np.ravel_multi_index(idx.T, (cells_per_axis,) * coords.shape[1])
    return np.bincount(flat, minlength=cells_per_axis ** coords.shape[1])


def uniformity_pvalue(coords: np.ndarray, cells_per_axis: int, side: float = 1.0) -> float:
    """Chi-square p-value of the cell counts against equal expected counts."""
    return float(stats.chisquare(cell_counts(coords, cells_per_axis, side)).pvalue)


@dataclass
class BenchReport:
    records: list
    aggregate: dict = field(default_factory=dict)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")
            fh.write(json.dumps({"aggregate": self.aggregate}) + "\n")

    @classmethod
    def read(cls, path) -> "BenchReport":
        records, agg = [], {}
        with open(path) as fh:
            for line in fh:
                obj = json.loads(line)
                if "aggregate" in obj:
                    agg = obj["aggregate"]
                else:
                    records.append(obj)
        return cls(records, agg)


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return 0.0 if num == 0 else math.inf


def evaluate(H: Hdg, q: np.ndarray, outcome, params: QueryParams) -> dict:
    truth, t_k = exact_knn(H.coords, q, params.k)
    found = outcome.result_ids
    max_dist = float(distances_to(H.coords[found], q).max())
    recall = len(set(truth.tolist()) & set(found.tolist())) / params.k
    ratio = _ratio(max_dist, t_k)
    s = outcome.stats
    return {
        "return_loop_index": outcome.return_loop_index,
        "guarantee_path": outcome.guarantee_path.value,
        "recall": recall,
        "distance_ratio": ratio,
        "distance_ok": max_dist <= params.c * t_k,
        "recall_ok": recall >= params.delta,
        "descent_visits": s.descent_visits,
        "navigation_visits": s.navigation_visits,
        "backend_calls": s.backend_calls,
        "candidates_scanned": int(s.candidates_scanned),
        "fallback": s.fallback,
    }


def layer_max_degrees(H: Hdg) -> list:
    return [max((len(H.nodes[j].graph_neighbors) for j in ids), default=0) for ids in H.layers]


def aggregate(records: list, params: QueryParams, extra: Optional[dict] = None) -> dict:
    """Summary statistics; a pure function of the records (plus run metadata)."""
    m = len(records)
    recalls = np.array([r["recall"] for r in records], dtype=float)
    recall_path = [r for r in records if r["guarantee_path"] == "recall"]
    distance_path = [r for r in records if r["guarantee_path"] == "distance"]

    def frac(rows, pred):
        return sum(1 for r in rows if pred(r)) / len(rows) if rows else None

    out = {
        "queries": m,
        "k": params.k,
        "c": params.c,
        "delta": params.delta,
        "backend": params.backend,
        "recall_mean": float(recalls.mean()) if m else None,
        "recall_p10": float(np.percentile(recalls, 10)) if m else None,
        "recall_p50": float(np.percentile(recalls, 50)) if m else None,
        "recall_p90": float(np.percentile(recalls, 90)) if m else None,
        "recall_path_queries": len(recall_path),
        "distance_path_queries": len(distance_path),
        "distance_criterion_pass_rate": frac(distance_path, lambda r: r["distance_ok"]),
        "unified_criterion_pass_rate": frac(records, lambda r: r["distance_ok"] or r["recall_ok"]),
        "recall_path_fraction_at_delta": {
            str(dl): frac(recall_path, lambda r, dl=dl: r["recall"] >= dl)
            for dl in sorted(set(REPORT_DELTAS + (params.delta,)))
        },
        "mean_navigation_visits": float(np.mean([r["navigation_visits"] for r in records])) if m else None,
        "mean_backend_calls": float(np.mean([r["backend_calls"] for r in records])) if m else None,
        "fallbacks": sum(1 for r in records if r["fallback"]),
    }
    if extra:
        out.update(extra)
    return out


def run_bench(H: Hdg, num_queries: int, params: QueryParams, seed: int = 0, workers: int = 1,
              timing: bool = False) -> BenchReport:
    """Run uniform random queries over the data's bounding box and score each one.

    Records come back in query-id order whatever ``workers`` is. Latencies are
    only recorded with ``timing=True`` since they break byte reproducibility.
    """
    if params.k > H.n:
        raise InvalidArgumentError(f"k={params.k} exceeds n={H.n}")
    rng = np.random.default_rng(seed)
    lo, hi = H.coords.min(axis=0), H.coords.max(axis=0)
    queries = rng.uniform(lo, hi, size=(num_queries, H.dim))
    searcher = Searcher(H)
    searcher.backend(params.backend, params.c)

    def one(i):
        start = time.perf_counter()
        outcome = searcher.query(queries[i], params)
        elapsed = time.perf_counter() - start
        rec = {"query_id": i}
        rec.update(evaluate(H, queries[i], outcome, params))
        if timing:
            rec["latency_s"] = elapsed
        return rec

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, range(num_queries)))
    else:
        records = [one(i) for i in range(num_queries)]
    extra = {
        "n": H.n,
        "d": H.dim,
        "build_seed": H.params.seed,
        "query_seed": seed,
        "epsilon": H.params.epsilon,
        "layer_max_degrees": layer_max_degrees(H),
    }
    return BenchReport(records, aggregate(records, params, extra))
