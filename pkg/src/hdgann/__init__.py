"""Approximate k-nearest-neighbor search over a hierarchical Delaunay graph index."""

from .bench import BenchReport, gen_poisson, run_bench
from .core import (
    ConfigurationError,
    Dataset,
    InvalidArgumentError,
    Point,
    Sphere,
    distance,
    exact_crknn,
    exact_knn,
    exact_mes,
    read_dataset,
    write_dataset,
)
from .crknn import ExactBackend, LshBackend, LshParams, collision_probability, derive_params, provision
from .delaunay import DtGraph, build_delaunay, verify_empty_sphere
from .enclosing import AmesParams, ames
from .hdg import (
    BuildParams,
    Hdg,
    HdgNode,
    IndexFormatError,
    IndexVersionError,
    build_index,
    load_index,
    save_index,
    validate_index,
)
from .query import GuaranteePath, QueryOutcome, QueryParams, Searcher, query
from .split_tree import build_bmst, build_mst, median_split

__version__ = "0.1.0"
