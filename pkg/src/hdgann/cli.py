"""Command-line entry point: ``hdgann {gen,build,validate,query,bench}``.

Exit codes: 0 on success, 1 on file errors or a failed validation, 2 on
usage errors (missing or contradictory flags).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from .bench import gen_poisson, run_bench
from .core import ConfigurationError, InvalidArgumentError, read_dataset, write_dataset
from .hdg import BuildParams, IndexFormatError, build_index, load_index, save_index, validate_index
from .query import QueryParams, query

log = logging.getLogger("hdgann")

EXIT_OK, EXIT_FILE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError:
        raise UsageError(f"--q must be comma-separated numbers, got {text!r}") from None


def _query_params(args) -> QueryParams:
    try:
        return QueryParams(args.k, args.c, args.delta, args.backend)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None


def cmd_gen(args) -> int:
    try:
        data = gen_poisson(args.n, args.d, args.side, args.seed)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None
    write_dataset(data, args.output)
    log.info("wrote %d points in %d dimensions to %s (data seed %d)", args.n, args.d, args.output, args.seed)
    return EXIT_OK


def cmd_build(args) -> int:
    try:
        params = BuildParams(args.epsilon, args.seed)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None
    data = read_dataset(args.input)
    start = time.perf_counter()
    try:
        H = build_index(data, params)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    elapsed = time.perf_counter() - start
    save_index(H, args.output)
    print(f"n={H.n} d={H.dim} layers={len(H.layers)} flatten_layer={H.flatten_layer} "
          f"epsilon={params.epsilon} seed={params.seed}")
    log.info("build took %.3f s", elapsed)
    return EXIT_OK


def cmd_validate(args) -> int:
    H = load_index(args.index)
    report = validate_index(H)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_FILE


def cmd_query(args) -> int:
    params = _query_params(args)
    H = load_index(args.index)
    q = _parse_vector(args.q)
    if q.shape != (H.dim,):
        raise UsageError(f"--q has {q.size} coordinates, index dimension is {H.dim}")
    if params.k > H.n:
        raise UsageError(f"--k {params.k} exceeds the number of indexed points {H.n}")
    outcome = query(H, q, params)
    s = outcome.stats
    print(json.dumps({
        "ids": [int(i) for i in outcome.result_ids],
        "return_loop_index": outcome.return_loop_index,
        "guarantee_path": outcome.guarantee_path.value,
        "stats": {
            "descent_visits": s.descent_visits,
            "navigation_visits": s.navigation_visits,
            "backend_calls": s.backend_calls,
            "candidates_scanned": int(s.candidates_scanned),
            "stop_node": s.stop_node,
            "final_radius": s.final_radius,
            "fallback": s.fallback,
        },
        "build_seed": H.params.seed,
    }))
    return EXIT_OK


def cmd_bench(args) -> int:
    params = _query_params(args)
    if args.queries < 1:
        raise UsageError(f"--queries must be >= 1, got {args.queries}")
    if args.workers < 1:
        raise UsageError(f"--workers must be >= 1, got {args.workers}")
    H = load_index(args.index)
    if params.k > H.n:
        raise UsageError(f"--k {params.k} exceeds the number of indexed points {H.n}")
    report = run_bench(H, args.queries, params, seed=args.seed, workers=args.workers, timing=args.timing)
    report.write(args.report)
    agg = report.aggregate
    print(f"queries={agg['queries']} recall_mean={agg['recall_mean']:.4f} "
          f"distance_criterion_pass_rate={agg['distance_criterion_pass_rate']} "
          f"recall_path_queries={agg['recall_path_queries']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdgann", description="Hierarchical Delaunay graph kNN index")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a uniform (conditional Poisson) dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--side", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0, help="data seed")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build an index from a dataset file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0, help="algorithm seed")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("validate", help="check the structural invariants of an index")
    p.add_argument("--index", required=True)
    p.set_defaults(func=cmd_validate)

    def query_flags(p, backend_required):
        p.add_argument("--index", required=True)
        p.add_argument("--k", type=int, required=True)
        p.add_argument("--c", type=float, required=True)
        p.add_argument("--delta", type=float, required=True)
        if backend_required:
            p.add_argument("--backend", choices=("exact", "lsh"), required=True)
        else:
            p.add_argument("--backend", choices=("exact", "lsh"), default="exact")

    p = sub.add_parser("query", help="answer one query")
    query_flags(p, backend_required=False)
    p.add_argument("--q", required=True, help='comma-separated coordinates, e.g. "0.5,0.5"')
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="run random queries and write a report")
    query_flags(p, backend_required=True)
    p.add_argument("--queries", type=int, required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=0, help="query seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="record per-query latency (not reproducible)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hdgann {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, IndexFormatError, InvalidArgumentError) as exc:
        print(f"hdgann {args.command}: {exc}", file=sys.stderr)
        return EXIT_FILE


if __name__ == "__main__":
    sys.exit(main())
