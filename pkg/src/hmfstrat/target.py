"""Round sphere targets S^n in R^(n+1)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BREAKDOWN_NORM = 1e-14


class ProjectionBreakdown(ArithmeticError):
    """Raised when a value is too close to 0 to be retracted onto the sphere."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class TargetSphere:
    n: int

    @property
    def ambient_dim(self) -> int:
        return self.n + 1

    def project(self, v):
        return project(v)

    def contains(self, v, tol: float = 1e-12) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(np.abs(np.linalg.norm(v, axis=-1) - 1.0) <= tol))


def project(v):
    """Nearest-point retraction ``v / |v|`` applied along the last axis."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    bad = norm[..., 0] < BREAKDOWN_NORM
    if np.any(bad):
        flat = int(np.flatnonzero(bad.ravel())[0]) if bad.ndim else 0
        raise ProjectionBreakdown(f"projection breakdown at cell {flat}", index=flat)
    return v / norm


def tension_nonlinearity(u, grad):
    """Second fundamental form term ``|grad u|^2 u`` for the unit sphere.

    ``grad`` has shape ``(..., m, n+1)`` matching ``u`` of shape ``(..., n+1)``.
    """
    u = np.asarray(u, dtype=float)
    grad = np.asarray(grad, dtype=float)
    energy = np.sum(grad * grad, axis=(-2, -1))
    return energy[..., None] * u


def laplacian(values: np.ndarray, h: float, m: int) -> np.ndarray:
    """Periodic second-order Laplacian of a field shaped ``(n,)*m + (n+1,)``."""
    out = -2.0 * m * values
    for ax in range(m):
        out = out + np.roll(values, 1, axis=ax) + np.roll(values, -1, axis=ax)
    return out / (h * h)


def central_gradient(values: np.ndarray, h: float, m: int) -> np.ndarray:
    """Periodic central differences, output shaped ``(n,)*m + (m, n+1)``."""
    parts = [(np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)) / (2 * h) for ax in range(m)]
    return np.stack(parts, axis=-2)


def harmonic_residual(snapshot, grid=None) -> np.ndarray:
    """Pointwise norm of the discrete tension field ``Delta u + |grad u|^2 u``.

    Accepts a :class:`~hmfstrat.solver.Snapshot` or a raw value array plus its grid.
    """
    if grid is None:
        values, grid = snapshot.values, snapshot.grid
    else:
        values = np.asarray(snapshot, dtype=float)
    h, m = grid.h, grid.m
    lap = laplacian(values, h, m)
    tau = lap + tension_nonlinearity(values, central_gradient(values, h, m))
    return np.linalg.norm(tau, axis=-1)
