"""(1+eps)-approximate minimum enclosing spheres.

The center walks toward the current farthest point with step ``1/i`` for
``ceil(1/eps**2)`` rounds. The reported radius is the largest distance from
the final center, so the sphere always encloses its input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import InvalidArgumentError, Sphere

DEFAULT_EPSILON = 0.1


@dataclass(frozen=True)
class AmesParams:
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidArgumentError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    @property
    def iterations(self) -> int:
        return iteration_count(self.epsilon)


def iteration_count(epsilon: float) -> int:
    # 1/0.1**2 evaluates to 99.99999999999999, hence the slack
    return max(1, math.ceil(1.0 / (epsilon * epsilon) - 1e-9))


def ames(points, epsilon: float = DEFAULT_EPSILON) -> Sphere:
    """Approximate minimum enclosing sphere of the rows of ``points``.

    Rows are taken in id order: the start point is row 0 and farthest-point
    ties go to the lower row.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    if points.shape[0] == 0:
        raise InvalidArgumentError("ames of an empty point set")
    centers, radii = _ames_padded(points[None, :, :], epsilon)
    return Sphere(centers[0], float(radii[0]))


def ames_groups(coords: np.ndarray, groups: Sequence[np.ndarray], epsilon: float = DEFAULT_EPSILON):
    """Run :func:`ames` on many id groups of one coordinate array at once.

    ``groups`` holds ascending id arrays. Groups are padded to a common size by
    repeating their first id, which changes neither farthest points (ties go to
    the first occurrence) nor the final radius. Returns ``(centers, radii)``
    with one row per group, identical to per-group :func:`ames` calls.
    """
    if not groups:
        return np.empty((0, coords.shape[1])), np.empty(0)
    AmesParams(epsilon)
    centers = np.empty((len(groups), coords.shape[1]))
    radii = np.empty(len(groups))
    # bucket by size so that one giant group does not inflate the padding
    by_size: dict[int, list[int]] = {}
    for g, ids in enumerate(groups):
        if len(ids) == 0:
            raise InvalidArgumentError("ames of an empty point set")
        by_size.setdefault(_size_class(len(ids)), []).append(g)
    for members in by_size.values():
        width = max(len(groups[g]) for g in members)
        idx = np.empty((len(members), width), dtype=np.int64)
        for row, g in enumerate(members):
            ids = np.asarray(groups[g], dtype=np.int64)
            idx[row, : len(ids)] = ids
            idx[row, len(ids):] = ids[0]
        c, r = _ames_padded(coords[idx], epsilon)
        centers[members] = c
        radii[members] = r
    return centers, radii


def _size_class(m: int) -> int:
    return m.bit_length()


def _ames_padded(X: np.ndarray, epsilon: float):
    """Core iteration on a ``(groups, m, d)`` array."""
    AmesParams(epsilon)
    rows = np.arange(X.shape[0])
    center = X[:, 0, :].copy()
    if X.shape[1] > 1:
        for i in range(1, iteration_count(epsilon) + 1):
            diff = X - center[:, None, :]
            far = np.argmax(np.einsum("gmd,gmd->gm", diff, diff), axis=1)
            center += (X[rows, far] - center) / i
    diff = X - center[:, None, :]
    radius = np.sqrt(np.einsum("gmd,gmd->gm", diff, diff).max(axis=1))
    return center, radius
