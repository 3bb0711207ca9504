"""Parabolic space-time geometry on a flat torus or box.

Points are ``X = (x, t)`` with ``x`` in R^m and time measured in length^2
units.  The parabolic distance is ``max(|x - y|, sqrt|t - s|)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_DIM = 4


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceTimePoint:
    x: tuple[float, ...]
    t: float = 0.0

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        if not 1 <= len(x) <= MAX_DIM:
            raise GeometryError(f"spatial dimension must be in [1, {MAX_DIM}], got {len(x)}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))

    @property
    def m(self) -> int:
        return len(self.x)

    def as_array(self) -> np.ndarray:
        return np.array(self.x + (self.t,))

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "SpaceTimePoint":
        a = np.asarray(a, dtype=float)
        return cls(tuple(a[:-1]), float(a[-1]))


@dataclass(frozen=True)
class ParabolicBall:
    center: SpaceTimePoint
    radius: float
    kind: str = "two-sided"

    def __post_init__(self):
        if self.radius <= 0:
            raise GeometryError("ball radius must be positive")
        if self.kind not in ("two-sided", "backward"):
            raise GeometryError(f"unknown ball kind {self.kind!r}")

    def time_interval(self) -> tuple[float, float]:
        t, r2 = self.center.t, self.radius ** 2
        return (t - r2, t + r2) if self.kind == "two-sided" else (t - r2, t)

    def contains(self, x: np.ndarray, t: np.ndarray, period: float | None = None) -> np.ndarray:
        """Membership test for arrays of points (``x`` has shape (N, m))."""
        dx = spatial_displacement(np.atleast_2d(x), np.array(self.center.x), period)
        inside = np.einsum("ij,ij->i", dx, dx) < self.radius ** 2
        t = np.asarray(t, dtype=float)
        lo, hi = self.time_interval()
        if self.kind == "two-sided":
            return inside & (t > lo) & (t < hi)
        return inside & (t > lo) & (t <= hi)

    def volume(self) -> float:
        v = ball_volume(self.radius, self.center.m)
        return v if self.kind == "two-sided" else v / 2


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centred grid; ``origin`` is the lower corner (default centres the box on 0)."""

    m: int
    n_cells: int
    h: float
    periodic: bool = True
    origin: float | None = None

    def __post_init__(self):
        if not 1 <= self.m <= MAX_DIM:
            raise GeometryError(f"m must be in [1, {MAX_DIM}]")
        if self.n_cells < 1:
            raise GeometryError("n_cells must be >= 1")
        if not self.h > 0:
            raise GeometryError("grid spacing h must be positive")
        if self.origin is None:
            object.__setattr__(self, "origin", -0.5 * self.n_cells * self.h)

    @property
    def period(self) -> float:
        return self.n_cells * self.h

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_cells,) * self.m

    @property
    def cell_volume(self) -> float:
        return self.h ** self.m

    def axis(self) -> np.ndarray:
        return self.origin + (np.arange(self.n_cells) + 0.5) * self.h

    def centers(self) -> np.ndarray:
        """All cell centres, shape (n_cells**m, m), row-major cell order."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.m), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def to_dict(self) -> dict:
        return {"m": self.m, "n_cells": self.n_cells, "h": self.h,
                "periodic": self.periodic, "origin": self.origin}


def spatial_displacement(x: np.ndarray, y: np.ndarray, period: float | None = None) -> np.ndarray:
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if period is not None:
        d = d - period * np.round(d / period)
    return d


def parabolic_distance(X: SpaceTimePoint, Y: SpaceTimePoint, period: float | None = None) -> float:
    if X.m != Y.m:
        raise GeometryError(f"dimension mismatch: {X.m} vs {Y.m}")
    d = spatial_displacement(np.array(X.x), np.array(Y.x), period)
    return max(float(np.sqrt(np.dot(d, d))), math.sqrt(abs(X.t - Y.t)))


def parabolic_distances(points: np.ndarray, X: np.ndarray, period: float | None = None) -> np.ndarray:
    """Distances from each row ``(x, t)`` of ``points`` to the single point ``X``."""
    points = np.atleast_2d(points)
    X = np.asarray(X, dtype=float)
    if points.shape[1] != X.shape[0]:
        raise GeometryError("dimension mismatch")
    d = spatial_displacement(points[:, :-1], X[:-1], period)
    return np.maximum(np.sqrt(np.einsum("ij,ij->i", d, d)), np.sqrt(np.abs(points[:, -1] - X[-1])))


def unit_ball_volume(m: int) -> float:
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1)


def ball_volume(r: float, m: int) -> float:
    """Lebesgue volume of the two-sided parabolic ball, ``w_m r^(m+2)`` with ``w_m = 2|B_1|``."""
    if r <= 0:
        raise GeometryError("radius must be positive")
    return 2.0 * unit_ball_volume(m) * r ** (m + 2)


def _as_point_array(S, m: int) -> np.ndarray:
    if isinstance(S, np.ndarray):
        arr = np.asarray(S, dtype=float)
    else:
        rows = [p.as_array() if isinstance(p, SpaceTimePoint) else np.asarray(p, float) for p in S]
        arr = np.array(rows, dtype=float) if rows else np.zeros((0, m + 1))
    arr = arr.reshape(-1, m + 1) if arr.size else np.zeros((0, m + 1))
    return arr


def tubular_volume(S: Iterable | np.ndarray, r: float, grid: GridSpec,
                   time_extent: tuple[float, float] | None = None,
                   chunk: int = 4096) -> float:
    """Volume of the parabolic r-tube around a finite point set.

    Space is discretised by cell-centre counting on ``grid``; in time the
    covered set over each spatial cell is a union of intervals
    ``[t_p - r^2, t_p + r^2]`` whose length is computed exactly.
    """
    m = grid.m
    pts = _as_point_array(S, m)
    if len(pts) == 0:
        return 0.0
    if grid.h > r / 4 * (1 + 1e-12):
        raise GeometryError(f"grid too coarse: h={grid.h} > r/4={r / 4}")
    n, h, origin = grid.n_cells, grid.h, grid.origin
    k = int(math.ceil(r / h)) + 1
    offs = np.arange(-k, k + 1)
    stencil = np.stack([g.ravel() for g in np.meshgrid(*([offs] * m), indexing="ij")], axis=-1)
    strides = n ** np.arange(m - 1, -1, -1)
    r2 = r * r

    keys_all, lo_all, hi_all = [], [], []
    for s in range(0, len(pts), chunk):
        block = pts[s:s + chunk]
        x, t = block[:, :m], block[:, m]
        base = np.floor((x - origin) / h).astype(np.int64)
        idx = base[:, None, :] + stencil[None, :, :]
        centers = origin + (idx + 0.5) * h
        d = centers - x[:, None, :]
        if grid.periodic:
            idx = np.mod(idx, n)
        dist2 = np.einsum("ijk,ijk->ij", d, d)
        ok = dist2 <= r2
        if not grid.periodic:
            ok &= np.all((idx >= 0) & (idx < n), axis=-1)
        pi, ci = np.nonzero(ok)
        keys_all.append(idx[pi, ci] @ strides)
        lo_all.append(t[pi] - r2)
        hi_all.append(t[pi] + r2)

    keys = np.concatenate(keys_all)
    lo = np.concatenate(lo_all)
    hi = np.concatenate(hi_all)
    if time_extent is not None:
        lo = np.maximum(lo, time_extent[0])
        hi = np.minimum(hi, time_extent[1])
        keep = hi > lo
        keys, lo, hi = keys[keep], lo[keep], hi[keep]
    if len(keys) == 0:
        return 0.0
    order = np.lexsort((lo, keys))
    keys, lo, hi = keys[order], lo[order], hi[order]
    _, rank = np.unique(keys, return_inverse=True)
    tmin = lo.min()
    big = (hi.max() - tmin) * 2.0 + 1.0
    shifted = (hi - tmin) + rank * big
    run = np.maximum.accumulate(shifted)
    prev = np.concatenate([[-np.inf], run[:-1]]) - rank * big + tmin
    covered = np.maximum(0.0, hi - np.maximum(lo, prev))
    return float(np.sum(covered) * grid.cell_volume)
