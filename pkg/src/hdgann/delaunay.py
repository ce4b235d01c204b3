"""Delaunay triangulation in d dimensions and an empty-circumsphere verifier.

The builder is incremental Bowyer-Watson. Instead of a bounding super-simplex
it keeps one "infinite" simplex per convex-hull facet (facet plus a vertex at
infinity); a site conflicts with such a simplex when it lies strictly beyond
the facet's hyperplane. This keeps hull edges exact, which a finite
super-simplex does not guarantee.

Predicates are floating point with a relative guard band. A site whose test
falls inside the band is nudged by a tiny seeded perturbation and retried.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from .core import InvalidArgumentError, circumsphere

log = logging.getLogger(__name__)

MAX_DIM = 6
INF = -1
INSPHERE_RTOL = 1e-10
ORIENT_RTOL = 1e-12
VERIFY_RTOL = 1e-9


@dataclass
class DtGraph:
    """Triangulation over ``sites`` (row ``i`` is site ``i``).

    ``simplices`` holds vertex tuples, normally of length ``d + 1``; when the
    sites span a lower-dimensional flat they are simplices of that flat.
    ``adjacency[i]`` is the sorted tuple of neighbors of site ``i``.
    """

    sites: np.ndarray
    simplices: list
    adjacency: list
    flat_dim: int = 0
    perturbed: int = 0

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def vertices(self) -> range:
        return range(self.n)

    def edges(self) -> set:
        return {(i, j) for i, nbrs in enumerate(self.adjacency) for j in nbrs if i < j}


def max_degree(graph: DtGraph) -> int:
    return max((len(a) for a in graph.adjacency), default=0)


def _adjacency_from_simplices(n: int, simplices) -> list:
    nbrs = [set() for _ in range(n)]
    for simplex in simplices:
        for a, b in combinations(simplex, 2):
            nbrs[a].add(b)
            nbrs[b].add(a)
    return [tuple(sorted(s)) for s in nbrs]


def morton_order(points: np.ndarray) -> np.ndarray:
    """Indices sorting ``points`` along a Z-order curve."""
    n, d = points.shape
    if n <= 1:
        return np.arange(n)
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    span[span == 0] = 1.0
    bits = max(1, min(20, 62 // d))
    grid = ((points - lo) / span * ((1 << bits) - 1)).astype(np.int64)
    code = np.zeros(n, dtype=np.int64)
    for b in range(bits - 1, -1, -1):
        for j in range(d):
            code = (code << 1) | ((grid[:, j] >> b) & 1)
    return np.lexsort((np.arange(n), code))


def affine_rank(points: np.ndarray, rtol: float = 1e-7):
    """Rank of the affine hull and an orthonormal basis (rows) for it."""
    centered = points - points.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return 0, vt[:0]
    rank = int(np.sum(s > rtol * s[0]))
    return rank, vt[:rank]


def build_delaunay(sites, seed: int = 0) -> DtGraph:
    """Delaunay triangulation of ``sites`` (an ``(n, d)`` array).

    Sites spanning a lower-dimensional flat are triangulated within that flat;
    ``n <= d + 1`` sites in general position give a single simplex.
    """
    if isinstance(sites, (list, tuple)):
        dims = {len(s) for s in sites}
        if len(dims) > 1:
            raise InvalidArgumentError(f"sites have mixed dimensions {sorted(dims)}")
    pts = np.asarray(sites, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise InvalidArgumentError("build_delaunay needs a non-empty (n, d) array")
    n, d = pts.shape
    if n == 1:
        return DtGraph(pts, [], [()], flat_dim=0)
    rank, basis = affine_rank(pts)
    if rank == 0:
        raise InvalidArgumentError("all sites coincide; the triangulation is undefined")
    if rank < d:
        local = (pts - pts.mean(axis=0)) @ basis.T
        sub = build_delaunay(local, seed)
        return DtGraph(pts, sub.simplices, sub.adjacency, flat_dim=rank, perturbed=sub.perturbed)
    if d == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        simplices = [tuple(sorted((int(a), int(b)))) for a, b in zip(order[:-1], order[1:])]
        return DtGraph(pts, simplices, _adjacency_from_simplices(n, simplices), flat_dim=1)
    if n == d + 1:
        simplices = [tuple(range(n))]
        return DtGraph(pts, simplices, _adjacency_from_simplices(n, simplices), flat_dim=d)
    builder = _BowyerWatson(pts, seed)
    simplices = builder.run()
    return DtGraph(pts, simplices, _adjacency_from_simplices(n, simplices), flat_dim=d,
                   perturbed=builder.perturbed)


class _Ambiguous(Exception):
    pass


class _BowyerWatson:
    def __init__(self, pts: np.ndarray, seed: int):
        self.pts = pts.copy()
        self.n, self.d = pts.shape
        self.rng = np.random.default_rng(seed)
        span = pts.max(axis=0) - pts.min(axis=0)
        self.scale = float(np.sqrt(span @ span))
        self.perturbed = 0
        # per-simplex records, indexed by simplex id
        self.verts: list = []
        self.nbr: list = []
        self.alive: list = []
        self.geom: list = []
        self.last = 0
        self.interior: Optional[np.ndarray] = None

    # geometry ---------------------------------------------------------

    def _finite_geometry(self, vs):
        V = self.pts[list(vs)]
        v0 = V[0]
        T = V[1:] - v0
        Tinv = np.linalg.inv(T)
        cp = Tinv @ (0.5 * np.einsum("ij,ij->i", T, T))
        return (v0, cp, float(cp @ cp), Tinv.T)

    def _facet_plane(self, facet):
        F = self.pts[list(facet)]
        E = F[1:] - F[0]
        normal = np.linalg.svd(E)[2][-1]
        offset = float(normal @ F[0])
        if normal @ self.interior - offset > 0:
            normal, offset = -normal, -offset
        return (normal, offset)

    def _geometry(self, vs):
        if INF in vs:
            return self._facet_plane([v for v in vs if v != INF])
        try:
            g = self._finite_geometry(vs)
        except np.linalg.LinAlgError:
            raise _Ambiguous from None
        if not (np.all(np.isfinite(g[1])) and np.all(np.isfinite(g[3]))):
            raise _Ambiguous
        return g

    def _make(self, vs, geom=None) -> int:
        sid = len(self.verts)
        self.verts.append(tuple(vs))
        self.nbr.append([None] * (self.d + 1))
        self.alive.append(True)
        self.geom.append(self._geometry(vs) if geom is None else geom)
        return sid

    def _conflict(self, sid: int, p: np.ndarray) -> bool:
        g = self.geom[sid]
        if len(g) == 2:
            normal, offset = g
            val = float(normal @ p) - offset
            if abs(val) <= ORIENT_RTOL * self.scale:
                raise _Ambiguous
            return val > 0
        v0, cp, r2, _ = g
        u = p - v0
        uu = float(u @ u)
        val = uu - 2.0 * float(u @ cp)
        if abs(val) <= INSPHERE_RTOL * (uu + r2):
            raise _Ambiguous
        return val < 0

    # construction -----------------------------------------------------

    def _initial_simplex(self, order):
        """Greedy well-spread ``d + 1`` sites: each maximizes distance to the span so far."""
        chosen = [int(order[0])]
        base = self.pts[chosen[0]]
        basis = np.zeros((0, self.d))
        for _ in range(self.d):
            rel = self.pts - base
            resid = rel - (rel @ basis.T) @ basis
            far = int(np.argmax(np.einsum("ij,ij->i", resid, resid)))
            chosen.append(far)
            v = resid[far] / np.linalg.norm(resid[far])
            basis = np.vstack([basis, v])
        return chosen

    def _link(self, sids):
        """Connect simplices in ``sids`` that share facets."""
        open_facets = {}
        for s in sids:
            vs = self.verts[s]
            for j in range(self.d + 1):
                if self.nbr[s][j] is not None:
                    continue
                key = tuple(sorted(vs[:j] + vs[j + 1:]))
                other = open_facets.pop(key, None)
                if other is None:
                    open_facets[key] = (s, j)
                else:
                    t, i = other
                    self.nbr[s][j] = t
                    self.nbr[t][i] = s

    def run(self) -> list:
        order = morton_order(self.pts)
        first = self._initial_simplex(order)
        self.interior = self.pts[first].mean(axis=0)
        s0 = self._make(first)
        hull = []
        for j in range(self.d + 1):
            vs = list(first)
            vs[j] = INF
            hull.append(self._make(vs))
        self._link([s0] + hull)
        self.last = s0
        placed = set(first)
        for i in order:
            i = int(i)
            if i in placed:
                continue
            self._insert_with_retries(i)
        return sorted(tuple(sorted(vs)) for vs, ok in zip(self.verts, self.alive)
                      if ok and INF not in vs)

    def _insert_with_retries(self, i: int):
        original = self.pts[i].copy()
        nudge = 1e-9 * (self.scale or 1.0)
        for attempt in range(40):
            try:
                self._insert(i)
                return
            except _Ambiguous:
                self.pts[i] = original + self.rng.uniform(-nudge, nudge, size=self.d)
                nudge *= 2.0
                if attempt == 0:
                    self.perturbed += 1
                    log.debug("site %d is near-degenerate; perturbing and retrying", i)
        raise RuntimeError(f"could not resolve degenerate configuration at site {i}")

    def _locate(self, p: np.ndarray) -> int:
        s = self.last if self.alive[self.last] else self._any_alive()
        for _ in range(4 * len(self.verts) + 16):
            if self._conflict(s, p):
                return s
            vs = self.verts[s]
            if INF in vs:
                s = self.nbr[s][vs.index(INF)]
                continue
            v0, _, _, TinvT = self.geom[s]
            lam = TinvT @ (p - v0)
            bary = np.empty(self.d + 1)
            bary[1:] = lam
            bary[0] = 1.0 - lam.sum()
            j = int(np.argmin(bary))
            if bary[j] >= 0:
                break
            s = self.nbr[s][j]
        # fall back to a scan; only reached on numerically awkward input
        for t, ok in enumerate(self.alive):
            if ok and self._conflict(t, p):
                return t
        raise _Ambiguous

    def _any_alive(self) -> int:
        for t in range(len(self.alive) - 1, -1, -1):
            if self.alive[t]:
                return t
        raise RuntimeError("empty triangulation")

    def _insert(self, i: int):
        p = self.pts[i]
        start = self._locate(p)
        cavity = {start}
        stack = [start]
        boundary = []
        while stack:
            s = stack.pop()
            for j, t in enumerate(self.nbr[s]):
                if t in cavity:
                    continue
                if self._conflict(t, p):
                    cavity.add(t)
                    stack.append(t)
                else:
                    boundary.append((s, j, t))
        planned = []
        for s, j, outside in boundary:
            vs = list(self.verts[s])
            vs[j] = i
            planned.append((s, j, outside, vs, self._geometry(vs)))
        # every test that can raise is done; from here on the cavity is replaced
        new = []
        for s, j, outside, vs, geom in planned:
            t = self._make(vs, geom)
            self.nbr[t][j] = outside
            back = self.nbr[outside].index(s)
            self.nbr[outside][back] = t
            new.append(t)
        for s in cavity:
            self.alive[s] = False
        self._link(new)
        self.last = new[-1]


@dataclass
class Violation:
    simplex: tuple
    site: int
    distance: float
    radius: float


@dataclass
class EmptySphereReport:
    ok: bool
    violations: list = field(default_factory=list)
    bad_edges: list = field(default_factory=list)
    problems: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def _circumspheres(pts: np.ndarray, simplices):
    """Batched :func:`~hdgann.core.circumsphere`; degenerate rows get radius ``inf``."""
    d = pts.shape[1]
    if not simplices:
        return np.empty((0, d)), np.empty(0)
    S = pts[np.asarray(simplices, dtype=np.int64)]
    p0 = S[:, 0, :]
    A = S[:, 1:, :] - p0[:, None, :]
    gram = np.einsum("sid,sjd->sij", A, A)
    rhs = 0.5 * np.einsum("sid,sid->si", A, A)
    centers = p0.copy()
    radii = np.full(len(S), np.inf)
    if A.shape[1] == 0:
        return centers, np.zeros(len(S))
    ok = np.linalg.cond(gram) <= 1e14
    if np.any(ok):
        lam = np.linalg.solve(gram[ok], rhs[ok][..., None])[..., 0]
        offset = np.einsum("si,sid->sd", lam, A[ok])
        centers[ok] = p0[ok] + offset
        radii[ok] = np.sqrt(np.einsum("sd,sd->s", offset, offset))
    return centers, radii


def verify_empty_sphere(sites, graph: DtGraph, rtol: float = VERIFY_RTOL) -> EmptySphereReport:
    """Check a triangulation against the empty-circumsphere definition.

    For every simplex the circumsphere is recomputed and all other sites are
    scanned; a site strictly inside (closer than ``radius * (1 - rtol)``) is a
    violation. Structural checks ride along: adjacency symmetry, adjacency
    equal to the simplex edges, and (for full-dimensional input) simplex
    volumes summing to the convex hull volume, which rules out missing
    simplices. In 2-d each edge must also belong to a non-violating triangle
    or lie on the convex hull; edges failing that go to ``bad_edges``.
    """
    pts = np.asarray(sites, dtype=float)
    n, d = pts.shape
    report = EmptySphereReport(ok=True)

    for i, nbrs in enumerate(graph.adjacency):
        for j in nbrs:
            if i not in graph.adjacency[j]:
                report.problems.append(f"asymmetric edge {i}->{j}")
    if _adjacency_from_simplices(n, graph.simplices) != [tuple(sorted(a)) for a in graph.adjacency]:
        report.problems.append("adjacency differs from the simplex edge set")

    bad_simplices = set()
    centers, radii = _circumspheres(pts, graph.simplices)
    for s in np.flatnonzero(~np.isfinite(radii)):
        report.problems.append(f"degenerate simplex {graph.simplices[s]}")
        bad_simplices.add(graph.simplices[s])
    width = len(graph.simplices[0]) if graph.simplices else 0
    verts = np.asarray(graph.simplices, dtype=np.int64).reshape(len(graph.simplices), width)
    chunk = max(1, 4_000_000 // max(1, n * d))
    for start in range(0, len(verts), chunk):
        stop = min(start + chunk, len(verts))
        diff = pts[None, :, :] - centers[start:stop, None, :]
        dist = np.sqrt(np.einsum("snd,snd->sn", diff, diff))
        rows = np.arange(stop - start)[:, None]
        dist[rows, verts[start:stop]] = np.inf
        # degenerate simplices are already reported; an infinite radius says nothing
        bound = np.where(np.isfinite(radii[start:stop]), radii[start:stop] * (1.0 - rtol), -np.inf)
        hit_s, hit_site = np.nonzero(dist < bound[:, None])
        for s, site in zip(hit_s, hit_site):
            simplex = graph.simplices[start + s]
            report.violations.append(
                Violation(simplex, int(site), float(dist[s, site]), float(radii[start + s])))
            bad_simplices.add(simplex)

    full = graph.flat_dim == d and n > d + 1
    if full and d >= 2:
        from scipy.spatial import ConvexHull

        hull = ConvexHull(pts)
        S = pts[verts]
        covered = float(np.abs(np.linalg.det(S[:, 1:] - S[:, :1])).sum()) / math.factorial(d)
        if not math.isclose(covered, hull.volume, rel_tol=1e-7):
            report.problems.append(f"simplices cover volume {covered!r}, convex hull has {hull.volume!r}")
        if d == 2:
            hull_edges = {tuple(sorted(map(int, e))) for e in hull.simplices}
            justified = set()
            for simplex in graph.simplices:
                if simplex not in bad_simplices:
                    justified.update(tuple(sorted(e)) for e in combinations(simplex, 2))
            for edge in sorted(graph.edges()):
                if edge not in justified and edge not in hull_edges:
                    report.bad_edges.append(edge)

    report.ok = not (report.violations or report.bad_edges or report.problems)
    return report


def brute_force_delaunay_edges_2d(sites) -> set:
    """Edges of all triangles whose circumcircle is empty, by exhaustive search.

    Cubic in the number of triangles; only for small test inputs.
    """
    pts = np.asarray(sites, dtype=float)
    n = len(pts)
    edges = set()
    for tri in combinations(range(n), 3):
        sphere = circumsphere(pts[list(tri)])
        if sphere is None:
            continue
        dist = np.sqrt(((pts - sphere.center) ** 2).sum(axis=1))
        dist[list(tri)] = np.inf
        if np.all(dist >= sphere.radius * (1.0 - VERIFY_RTOL)):
            edges.update(tuple(sorted(e)) for e in combinations(tri, 2))
    return edges
