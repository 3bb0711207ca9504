"""Weighted energy functionals evaluated by midpoint quadrature.

The backward Struwe annulus is integrated shell by shell between
breakpoints ``base^k``.  Annuli whose radii are powers of ``base`` share
shells, so sums over adjacent annuli reproduce the larger annulus exactly.
Inside a shell the time variable is substituted as ``|t - t0| = rho^2 sigma^2``,
which spreads nodes evenly across the range where the heat kernel changes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import SpaceTimePoint

CHUNK = 200_000


class EnergyError(ValueError):
    pass


@dataclass
class EnergyReport:
    kind: str
    X: SpaceTimePoint
    r1: float
    value: float
    cells: int
    r2: float | None = None
    cutoff: float | None = None
    extra: dict = field(default_factory=dict)

    def row(self) -> list:
        return [*self.X.x, self.X.t, self.kind, self.r1, "" if self.r2 is None else self.r2,
                self.value, "" if self.cutoff is None else self.cutoff, self.cells]


def write_energy_csv(reports: list[EnergyReport], path) -> None:
    m = reports[0].X.m if reports else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(m)] + ["t", "kind", "r1", "r2", "value", "cutoff", "cells"])
        for rep in reports:
            w.writerow([repr(v) if isinstance(v, float) else v for v in rep.row()])


def _cube_nodes(m: int, n: int, half: float) -> np.ndarray:
    ax = -half + (np.arange(n) + 0.5) * (2 * half / n)
    mesh = np.meshgrid(*([ax] * m), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def _fields_chunked(traj, x, t, order=1):
    """Derivatives at many points, evaluated in fixed-size chunks."""
    parts = [traj.derivatives(x[i:i + CHUNK], t[i:i + CHUNK], hessian=order >= 2)
             for i in range(0, len(x), CHUNK)]
    if len(parts) == 1:
        return parts[0]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _check_range(traj, lo, hi):
    if getattr(traj, "source", "analytic") == "simulated":
        traj.check_time_range(lo, hi)


def _ball_integral(traj, X: SpaceTimePoint, r: float, density, n_space: int, n_time: int):
    """Midpoint quadrature of ``density(fields)`` over P_r(X); returns (integral, cells)."""
    if r <= 0:
        raise EnergyError("radius must be positive")
    m = traj.m
    offsets = _cube_nodes(m, n_space, r)
    offsets = offsets[np.einsum("ij,ij->i", offsets, offsets) < r * r]
    cell = (2 * r / n_space) ** m
    x = np.array(X.x) + offsets
    if traj.is_static:
        f = _fields_chunked(traj, x, np.full(len(x), X.t))
        vals = np.where(f["valid"], density(f), 0.0)
        return float(np.sum(vals) * cell * 2 * r * r), len(x)
    dt = 2 * r * r / n_time
    times = X.t - r * r + (np.arange(n_time) + 0.5) * dt
    _check_range(traj, times[0], times[-1])
    total = 0.0
    for t in times:
        f = _fields_chunked(traj, x, np.full(len(x), t))
        total += float(np.sum(np.where(f["valid"], density(f), 0.0)))
    return total * cell * dt, len(x) * n_time


def dirichlet_scale_invariant(traj, X: SpaceTimePoint, r: float, n_space: int = 64,
                              n_time: int = 16) -> EnergyReport:
    """``r^-m int_{P_r(X)} |grad u|^2``."""
    val, cells = _ball_integral(traj, X, r, lambda f: np.sum(f["grad"] ** 2, axis=(1, 2)),
                                n_space, n_time)
    return EnergyReport("dirichlet", X, r, val / r ** traj.m, cells)


def time_derivative_energy(traj, X: SpaceTimePoint, r: float, n_space: int = 32,
                           n_time: int = 16) -> EnergyReport:
    """``r^(2-m) int_{P_r(X)} |d_t u|^2``."""
    if traj.is_static:
        return EnergyReport("time_derivative", X, r, 0.0, 0)
    val, cells = _ball_integral(traj, X, r, lambda f: np.sum(f["dt"] ** 2, axis=1), n_space, n_time)
    return EnergyReport("time_derivative", X, r, val * r ** (2 - traj.m), cells)


def shell_breakpoints(r1: float, r2: float, base: float = 0.5) -> list[float]:
    """``r1 > b_1 > ... > r2`` with interior points the powers of ``base`` strictly inside."""
    if not r1 > r2 > 0:
        raise EnergyError(f"annulus needs r1 > r2 > 0 (got r1={r1}, r2={r2})")
    if not 0 < base < 1:
        raise EnergyError("shell base must lie in (0, 1)")
    lb = math.log(base)
    k_lo = math.floor(math.log(r1) / lb) - 1
    k_hi = math.ceil(math.log(r2) / lb) + 1
    inner = [base ** k for k in range(k_lo, k_hi + 1)]
    pts = [r1] + [b for b in inner if r2 * (1 + 1e-12) < b < r1 * (1 - 1e-12)] + [r2]
    return pts


def _shell(traj, X0: SpaceTimePoint, ro: float, ri: float, n_s: int, n_sigma: int) -> tuple[float, int]:
    m = traj.m
    offsets = _cube_nodes(m, n_s, ro)
    d2 = np.einsum("ij,ij->i", offsets, offsets)
    offsets, d2 = offsets[d2 < ro * ro], d2[d2 < ro * ro]
    cell = (2 * ro / n_s) ** m
    sig = (np.arange(n_sigma) + 0.5) / n_sigma
    tau = ro * ro * sig * sig
    jac = 2 * ro * ro * sig / n_sigma
    # cells of the inner backward ball are not part of the shell
    keep = ~((d2[:, None] < ri * ri) & (tau[None, :] < ri * ri))
    weight = (np.exp(-d2[:, None] / (4 * tau[None, :])) * tau[None, :] ** (-(m + 2) / 2)
              * jac[None, :] * keep)
    x = np.array(X0.x) + offsets
    if traj.is_static:
        f = _fields_chunked(traj, x, np.full(len(x), X0.t))
        defect = np.einsum("ni,nia->na", offsets, f["grad"])
        dens = np.where(f["valid"], np.sum(defect * defect, axis=1), 0.0)
        return float(np.sum(dens * np.sum(weight, axis=1)) * cell), int(keep.sum())
    _check_range(traj, X0.t - ro * ro, X0.t - tau[0])
    total = 0.0
    for j in range(n_sigma):
        rows = keep[:, j]
        if not rows.any():
            continue
        t = np.full(int(rows.sum()), X0.t - tau[j])
        f = _fields_chunked(traj, x[rows], t)
        defect = np.einsum("ni,nia->na", offsets[rows], f["grad"]) - 2 * tau[j] * f["dt"]
        dens = np.where(f["valid"], np.sum(defect * defect, axis=1), 0.0)
        total += float(np.sum(dens * weight[rows, j]))
    return total * cell, int(keep.sum())


def struwe_shells(traj, X0: SpaceTimePoint, r1: float, r2: float, n_s: int = 24, n_sigma: int = 24,
                  base: float = 0.5) -> list[tuple[float, float, float, int]]:
    """Per-shell contributions ``(rho_out, rho_in, value, cells)`` from outside in."""
    pts = shell_breakpoints(r1, r2, base)
    out = []
    for ro, ri in zip(pts[:-1], pts[1:]):
        val, cells = _shell(traj, X0, ro, ri, n_s, n_sigma)
        out.append((ro, ri, val, cells))
    return out


def struwe_annulus(traj, X0: SpaceTimePoint, r1: float, r2: float, n_s: int = 24, n_sigma: int = 24,
                   base: float = 0.5) -> EnergyReport:
    """``W_{r1,r2}(u, X0)``: the Gaussian-weighted self-similarity defect on P^-_{r1} minus P^-_{r2}."""
    shells = struwe_shells(traj, X0, r1, r2, n_s, n_sigma, base)
    value = 0.0
    for _, _, v, _ in shells:
        value += v
    return EnergyReport("struwe", X0, r1, value, sum(s[3] for s in shells), r2=r2, cutoff=r2 * r2,
                        extra={"shells": len(shells)})


def struwe_total(traj, X0: SpaceTimePoint, R: float, rho_min: float, **kw) -> EnergyReport:
    """Struwe energy over P^-_{2R}(X0), truncated inside radius ``rho_min``."""
    if rho_min <= 0:
        raise EnergyError("rho_min must be positive")
    rep = struwe_annulus(traj, X0, 2 * R, rho_min, **kw)
    rep.kind = "struwe_total"
    return rep


def gaussian_scale_energy(traj, X0: SpaceTimePoint, r: float, n: int = 48, extent: float = 8.0) -> EnergyReport:
    """``r^2 int |grad u|^2 (4 pi r^2)^(-m/2) exp(-|x - x0|^2 / 4r^2)`` on the slice ``t0 - r^2``."""
    m = traj.m
    half = extent * r
    if traj.period is not None:
        half = min(half, traj.period / 2)
    offsets = _cube_nodes(m, n, half)
    cell = (2 * half / n) ** m
    t = X0.t - r * r
    _check_range(traj, t, t)
    x = np.array(X0.x) + offsets
    f = _fields_chunked(traj, x, np.full(len(x), t))
    dens = np.where(f["valid"], np.sum(f["grad"] ** 2, axis=(1, 2)), 0.0)
    kern = (4 * math.pi * r * r) ** (-m / 2) * np.exp(-np.einsum("ij,ij->i", offsets, offsets) / (4 * r * r))
    return EnergyReport("gaussian", X0, r, float(r * r * np.sum(dens * kern) * cell), len(x))
