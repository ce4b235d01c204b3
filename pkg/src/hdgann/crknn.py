"""(c,r)-kNN backends: an exact linear scan and a multi-table p-stable LSH.

Both backends answer ``answer(q, k, c, r)`` with either ``k`` point ids lying
in the closed ball ``S(q, c*r)`` or ``None`` for the empty answer.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, stats

from .core import ConfigurationError, InvalidArgumentError, distances_to, exact_crknn

log = logging.getLogger(__name__)

DEFAULT_WIDTH_FACTOR = 4.0
DEFAULT_MAX_TABLES = 20_000
DEFAULT_MAX_BYTES = 1 << 30


class ExactBackend:
    """Reference backend: one linear scan per call."""

    name = "exact"

    def __init__(self, coords):
        self.coords = np.asarray(coords, dtype=float)

    def scan(self, q, k: int, c: float, r: float):
        return exact_crknn(self.coords, q, k, c, r), len(self.coords)

    def answer(self, q, k: int, c: float, r: float) -> Optional[np.ndarray]:
        return self.scan(q, k, c, r)[0]


def collision_probability(w: float, s: float) -> float:
    """Chance that two points at distance ``s`` share a bucket of one hash.

    The hash is ``floor((a.x + b) / w)`` with Gaussian ``a`` and ``b`` uniform
    on ``[0, w)``. The projected gap ``|a.(x - y)|`` is half-normal with scale
    ``s``; integrating its density against the overlap ``1 - t/w`` gives the
    probability.
    """
    if w <= 0:
        raise InvalidArgumentError(f"bucket width must be > 0, got {w}")
    if s < 0:
        raise InvalidArgumentError(f"distance must be >= 0, got {s}")
    if s == 0:
        return 1.0
    value, _ = integrate.quad(lambda t: 2.0 * stats.norm.pdf(t / s) / s * (1.0 - t / w), 0.0, w,
                              epsabs=1e-13, epsrel=1e-12)
    return float(value)


@dataclass(frozen=True)
class LshParams:
    w: float
    M: int
    L: int
    rho: float
    p1: float
    p2: float
    seed: int = 0

    def __post_init__(self):
        if not self.p2 < self.p1:
            raise ValueError(f"hash family is not locality sensitive: p1={self.p1}, p2={self.p2}")
        if self.M < 1 or self.L < 1:
            raise ValueError("M and L must be positive")


def derive_params(n: int, k: int, c: float, r: float, w: Optional[float] = None, seed: int = 0) -> LshParams:
    """Concatenation length ``M = ceil(log_{1/p2} n)`` and ``L = ceil(k n^rho)`` tables."""
    if n < 2:
        raise InvalidArgumentError(f"need n >= 2, got {n}")
    if c <= 1:
        raise InvalidArgumentError(f"c must be > 1, got {c}")
    if r <= 0:
        raise InvalidArgumentError(f"r must be > 0, got {r}")
    w = DEFAULT_WIDTH_FACTOR * r if w is None else w
    p1 = collision_probability(w, r)
    p2 = collision_probability(w, c * r)
    if not p2 < p1:
        raise RuntimeError(f"collision probability not decreasing: p1={p1}, p2={p2}")
    rho = math.log(1.0 / p1) / math.log(1.0 / p2)
    M = max(1, math.ceil(math.log(n) / math.log(1.0 / p2) - 1e-9))
    L = max(1, math.ceil(k * n ** rho - 1e-9))
    return LshParams(w, M, L, rho, p1, p2, seed)


class LshLevel:
    """``L`` hash tables for one radius.

    Each table keys a point by the ``M``-tuple of quantized projections
    (:meth:`keys`). Buckets are stored as a sort of the points by a 64-bit
    fingerprint of that tuple, so a lookup is one binary search.
    """

    def __init__(self, coords: np.ndarray, params: LshParams, radius: float):
        self.params = params
        self.radius = radius
        d = coords.shape[1]
        rng = np.random.default_rng(params.seed)
        self.proj = rng.standard_normal((params.L, params.M, d))
        self.offset = rng.uniform(0.0, params.w, size=(params.L, params.M))
        self.mix = rng.integers(1, 2**63 - 1, size=params.M, dtype=np.int64) | 1
        n = coords.shape[0]
        self.order = np.empty((params.L, n), dtype=np.int32)
        self.sorted_fp = np.empty((params.L, n), dtype=np.int64)
        for j in range(params.L):
            fp = self._fingerprint(self.keys(coords, j))
            order = np.argsort(fp, kind="stable")
            self.order[j] = order
            self.sorted_fp[j] = fp[order]

    @property
    def nbytes(self) -> int:
        return self.order.nbytes + self.sorted_fp.nbytes + self.proj.nbytes

    def keys(self, X: np.ndarray, j: int) -> np.ndarray:
        """The ``(len(X), M)`` integer keys of rows of ``X`` in table ``j``."""
        X = np.atleast_2d(X)
        return np.floor((X @ self.proj[j].T + self.offset[j]) / self.params.w).astype(np.int64)

    def _fingerprint(self, keys: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return (keys * self.mix).sum(axis=-1)

    def query_fingerprints(self, q: np.ndarray) -> np.ndarray:
        raw = np.einsum("lmd,d->lm", self.proj, q) + self.offset
        return self._fingerprint(np.floor(raw / self.params.w).astype(np.int64))

    def bucket(self, j: int, fp) -> np.ndarray:
        row = self.sorted_fp[j]
        lo = np.searchsorted(row, fp, side="left")
        hi = np.searchsorted(row, fp, side="right")
        return self.order[j, lo:hi]


class LshBackend:
    """Probabilistic backend with lazily provisioned radius levels.

    Levels sit on the grid ``base_radius * c**t``. A call with radius ``r`` uses
    the smallest level radius ``>= r`` (but still filters at ``c*r``), so
    returned points always lie within ``c*r`` of the query.
    """

    name = "lsh"

    def __init__(self, coords, c: float, base_radius: float, seed: int = 0,
                 width_factor: float = DEFAULT_WIDTH_FACTOR,
                 max_tables: int = DEFAULT_MAX_TABLES, max_bytes: int = DEFAULT_MAX_BYTES):
        if c <= 1:
            raise InvalidArgumentError(f"c must be > 1, got {c}")
        self.coords = np.asarray(coords, dtype=float)
        self.n = len(self.coords)
        self.c = float(c)
        self.base = float(base_radius) if base_radius > 0 else 1.0
        self.seed = seed
        self.width_factor = width_factor
        self.max_tables = max_tables
        self.max_bytes = max_bytes
        self.min_level = -(math.ceil(math.log(max(self.n, 2), self.c)) + 2)
        self.levels: dict = {}
        self._lock = threading.Lock()

    def level_index(self, r: float) -> int:
        if r <= 0:
            return self.min_level
        t = math.ceil(math.log(r / self.base, self.c) - 1e-12)
        # floating error in the log can land one step low
        if self.base * self.c ** t < r:
            t += 1
        return max(t, self.min_level)

    def level_radius(self, t: int) -> float:
        return self.base * self.c ** t

    def level(self, k: int, t: int) -> LshLevel:
        key = (k, t)
        found = self.levels.get(key)
        if found is not None:
            return found
        with self._lock:
            found = self.levels.get(key)
            if found is None:
                found = self._provision(k, t)
                self.levels[key] = found
        return found

    def _provision(self, k: int, t: int) -> LshLevel:
        radius = self.level_radius(t)
        seed = int(np.random.SeedSequence([self.seed, k, t - self.min_level]).generate_state(1)[0])
        params = derive_params(max(self.n, 2), k, self.c, radius, self.width_factor * radius, seed)
        tables = params.L + sum(level.params.L for level in self.levels.values())
        predicted = params.L * (self.n * 12 + params.M * self.coords.shape[1] * 8)
        used = sum(level.nbytes for level in self.levels.values())
        if tables > self.max_tables or used + predicted > self.max_bytes:
            raise ConfigurationError(
                f"LSH provisioning refused: {tables} tables / {used + predicted} bytes exceed the cap "
                f"({self.max_tables} tables, {self.max_bytes} bytes); lower k or raise c")
        log.debug("provisioning LSH level t=%d r=%.6g: M=%d L=%d rho=%.4f", t, radius, params.M,
                  params.L, params.rho)
        return LshLevel(self.coords, params, radius)

    def provision(self, k: int, radii: Sequence[float]) -> list:
        return [self.level(k, self.level_index(r)) for r in radii]

    def scan(self, q, k: int, c: float, r: float):
        """Probe the ``L`` buckets of ``q``; returns ``(ids or None, candidates scanned)``."""
        if c != self.c:
            raise InvalidArgumentError(f"backend provisioned for c={self.c}, called with c={c}")
        if r < 0:
            raise InvalidArgumentError(f"r must be >= 0, got {r}")
        q = np.asarray(q, dtype=float)
        t = self.level_index(r)
        level = self.level(k, t)
        if level.radius != r:
            log.debug("radius %.6g rounded up to level %d (%.6g)", r, t, level.radius)
        limit = 3 * level.params.L
        bound = c * r
        fps = level.query_fingerprints(q)
        seen = np.zeros(self.n, dtype=bool)
        found: list = []
        scanned = 0
        for j in range(level.params.L):
            bucket = level.bucket(j, fps[j])
            if bucket.size == 0:
                continue
            fresh = bucket[~seen[bucket]]
            if fresh.size == 0:
                continue
            seen[fresh] = True
            inside = distances_to(self.coords[fresh], q) <= bound
            hits = np.cumsum(inside) + len(found)
            done = np.flatnonzero(hits >= k)
            budget = limit - scanned
            if done.size and done[0] < budget:
                stop = int(done[0]) + 1
                found.extend(int(i) for i in fresh[:stop][inside[:stop]])
                return np.array(found, dtype=np.int64), scanned + stop
            if fresh.size >= budget:
                return None, limit
            found.extend(int(i) for i in fresh[inside])
            scanned += fresh.size
        return None, scanned

    def answer(self, q, k: int, c: float, r: float) -> Optional[np.ndarray]:
        return self.scan(q, k, c, r)[0]


def provision(P, k: int, c: float, levels: Sequence[float], seed: int = 0, **kwargs) -> LshBackend:
    """Eagerly build an :class:`LshBackend` holding the given geometric radius levels."""
    levels = [float(r) for r in levels]
    if not levels or any(r <= 0 for r in levels):
        raise InvalidArgumentError("levels must be positive radii")
    for a, b in zip(levels, levels[1:]):
        if not math.isclose(b / a, c, rel_tol=1e-9):
            raise InvalidArgumentError("levels must increase geometrically with ratio c")
    coords = P.coords if hasattr(P, "coords") else np.asarray(P, dtype=float)
    backend = LshBackend(coords, c, base_radius=levels[0], seed=seed, **kwargs)
    backend.provision(k, levels)
    return backend
