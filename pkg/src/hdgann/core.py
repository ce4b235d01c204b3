"""Points, datasets, spheres, the Euclidean metric and brute-force oracles.

Everything else in the package is checked against the scanning routines in
this module, so they are kept deliberately simple.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class InvalidArgumentError(ValueError):
    """Raised when an operation receives arguments outside its domain."""


class ConfigurationError(ValueError):
    """Raised for unsupported build configurations (e.g. dimension too high)."""


JITTER_SCALE = 1e-9


@dataclass(frozen=True)
class Point:
    id: int
    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 1 or coords.size < 1:
            raise InvalidArgumentError("a point needs a 1-d coordinate vector of length >= 1")
        if not np.all(np.isfinite(coords)):
            raise InvalidArgumentError("point coordinates must be finite")
        if self.id < 0:
            raise InvalidArgumentError("point ids are non-negative")
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        if center.ndim != 1:
            raise InvalidArgumentError("sphere center must be a vector")
        if not self.radius >= 0:
            raise InvalidArgumentError(f"sphere radius must be >= 0, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))

    def contains(self, x, rtol: float = 0.0) -> bool:
        """Closed-ball membership, optionally with a relative slack on the radius."""
        return distance(self.center, x) <= self.radius * (1.0 + rtol)

    def __eq__(self, other):
        if not isinstance(other, Sphere):
            return NotImplemented
        return self.radius == other.radius and np.array_equal(self.center, other.center)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable ``(n, d)`` coordinate array; point ids are row indices.

    ``jitter_seed`` is set when the coordinates carry the tie-breaking
    perturbation applied by :meth:`jittered`.
    """

    coords: np.ndarray
    jitter_seed: Optional[int] = None

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords.reshape(-1, 1)
        if coords.ndim != 2 or coords.shape[0] < 1 or coords.shape[1] < 1:
            raise InvalidArgumentError("a dataset needs n >= 1 points of dimension d >= 1")
        if not np.all(np.isfinite(coords)):
            raise InvalidArgumentError("dataset coordinates must be finite")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_points(cls, points: Sequence[Point]) -> "Dataset":
        ids = [p.id for p in points]
        if sorted(ids) != list(range(len(points))):
            raise InvalidArgumentError("point ids must be exactly 0..n-1")
        dims = {p.dim for p in points}
        if len(dims) != 1:
            raise InvalidArgumentError(f"points have mixed dimensions {sorted(dims)}")
        coords = np.empty((len(points), dims.pop()))
        for p in points:
            coords[p.id] = p.coords
        return cls(coords)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self) -> int:
        return self.n

    def point(self, i: int) -> Point:
        return Point(int(i), self.coords[i])

    @property
    def points(self) -> list:
        return [self.point(i) for i in range(self.n)]

    def diameter_bound(self) -> float:
        """Diagonal of the bounding box, an upper bound on the set's diameter."""
        span = self.coords.max(axis=0) - self.coords.min(axis=0)
        return float(np.sqrt(np.sum(span * span)))

    def jittered(self, seed: int) -> "Dataset":
        """Return a copy with every coordinate shifted uniformly in ``[-eta, eta]``.

        ``eta`` is ``1e-9`` times the bounding-box diagonal (or times the
        largest coordinate magnitude when all points coincide). After the shift
        no two points share a coordinate in any dimension.
        """
        rng = np.random.default_rng(seed)
        scale = self.diameter_bound()
        if scale == 0.0:
            scale = max(1.0, float(np.abs(self.coords).max()))
        eta = JITTER_SCALE * scale
        for _ in range(100):
            out = self.coords + rng.uniform(-eta, eta, size=self.coords.shape)
            if has_distinct_coordinates(out):
                return Dataset(out, jitter_seed=seed)
        raise InvalidArgumentError("could not separate coordinates by jitter; data too degenerate")

    def save_text(self, path) -> None:
        write_dataset(self, path)

    @classmethod
    def load_text(cls, path) -> "Dataset":
        return read_dataset(path)


def has_distinct_coordinates(coords: np.ndarray) -> bool:
    coords = np.asarray(coords)
    for j in range(coords.shape[1]):
        col = np.sort(coords[:, j])
        if np.any(col[1:] == col[:-1]):
            return False
    return True


def as_coords(x) -> np.ndarray:
    """Coordinates of a :class:`Point` or array-like, as a float vector."""
    if isinstance(x, Point):
        return x.coords
    return np.asarray(x, dtype=float)


def _as_matrix(P) -> np.ndarray:
    if isinstance(P, Dataset):
        return P.coords
    arr = np.asarray(P, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def distance(a, b) -> float:
    a = as_coords(a)
    b = as_coords(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt(np.dot(diff, diff)))


def distances_to(coords: np.ndarray, q) -> np.ndarray:
    """Euclidean distances from every row of ``coords`` to ``q``."""
    q = as_coords(q)
    if coords.shape[1] != q.shape[0]:
        raise InvalidArgumentError(f"dimension mismatch: data d={coords.shape[1]}, query d={q.shape[0]}")
    diff = coords - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def exact_knn(P, q, k: int) -> tuple[np.ndarray, float]:
    """The ``k`` nearest ids to ``q`` and ``T_k``, the largest of their distances.

    Ids are ordered by distance, then by id.
    """
    coords = _as_matrix(P)
    n = coords.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k must be in [1, n={n}], got {k}")
    dist = distances_to(coords, q)
    order = np.lexsort((np.arange(n), dist))[:k]
    return order, float(dist[order[-1]])


def exact_mes(P) -> Sphere:
    """Minimum enclosing sphere via Welzl's randomized recursion.

    The returned radius is the largest distance from the found center, so the
    enclosing property holds exactly. Meant as a validation oracle for small
    sets, not as a production path.
    """
    coords = _as_matrix(P)
    if coords.size == 0:
        raise InvalidArgumentError("exact_mes of an empty set")
    n, d = coords.shape
    if n == 1 or np.all(coords == coords[0]):
        return Sphere(coords[0].copy(), 0.0)
    order = list(np.random.default_rng(0).permutation(n))

    def ball(support):
        if not support:
            return None
        return circumsphere(coords[support])

    def inside(sphere, i):
        if sphere is None:
            return False
        return distance(sphere.center, coords[i]) <= sphere.radius * (1 + 1e-12)

    def welzl(m, support):
        # smallest ball of points order[:m] with ``support`` on its boundary
        if m == 0 or len(support) == d + 1:
            return ball(support)
        i = order[m - 1]
        sphere = welzl(m - 1, support)
        if inside(sphere, i):
            return sphere
        return welzl(m - 1, support + [i])

    sphere = welzl(n, [])
    radius = float(distances_to(coords, sphere.center).max())
    return Sphere(sphere.center, radius)


def circumsphere(S: np.ndarray) -> Optional[Sphere]:
    """Smallest sphere passing through all rows of ``S`` (1 <= m <= d+1 points).

    The center lies in the affine hull of the points. Returns ``None`` for
    affinely dependent input.
    """
    S = np.asarray(S, dtype=float)
    p0 = S[0]
    if len(S) == 1:
        return Sphere(p0.copy(), 0.0)
    A = S[1:] - p0
    gram = A @ A.T
    rhs = 0.5 * np.einsum("ij,ij->i", A, A)
    try:
        lam = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(lam)):
        return None
    # near-singular gram matrices give meaningless huge spheres
    if np.linalg.cond(gram) > 1e14:
        return None
    offset = lam @ A
    return Sphere(p0 + offset, float(np.sqrt(offset @ offset)))


def exact_crknn(P, q, k: int, c: float, r: float) -> Optional[np.ndarray]:
    """Decision-style (c,r)-kNN by linear scan.

    Returns ``k`` ids from the closed ball ``S(q, c*r)`` whenever that ball
    holds at least ``k`` points (the first ``k`` in id order), else ``None``
    (the empty answer). ``r == 0`` is accepted and means exact coincidence.
    """
    if c <= 1:
        raise InvalidArgumentError(f"c must be > 1, got {c}")
    if r < 0:
        raise InvalidArgumentError(f"r must be >= 0, got {r}")
    coords = _as_matrix(P)
    dist = distances_to(coords, q)
    inside = np.flatnonzero(dist <= c * r)
    if inside.size < k:
        return None
    return inside[:k]


def write_dataset(P, path) -> None:
    """Write the ``"d n"`` header then one whitespace-separated row per point."""
    coords = _as_matrix(P)
    n, d = coords.shape
    with open(path, "w") as fh:
        fh.write(f"{d} {n}\n")
        for row in coords:
            fh.write(" ".join(repr(float(x)) for x in row))
            fh.write("\n")


def read_dataset(path) -> Dataset:
    text = Path(path).read_text().split("\n")
    header = text[0].split()
    if len(header) != 2:
        raise InvalidArgumentError(f"{path}: first line must be 'd n'")
    d, n = int(header[0]), int(header[1])
    rows = [line.split() for line in text[1:] if line.strip()]
    if len(rows) != n:
        raise InvalidArgumentError(f"{path}: header says n={n} but found {len(rows)} rows")
    for lineno, row in enumerate(rows, start=2):
        if len(row) != d:
            raise InvalidArgumentError(f"{path}:{lineno}: expected {d} values, got {len(row)}")
    return Dataset(np.array(rows, dtype=float).reshape(n, d))
