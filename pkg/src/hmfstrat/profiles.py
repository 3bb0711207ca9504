"""Equivariant profiles of self-similarly shrinking maps R^k -> S^k.

A profile ``h(rho)`` defines ``psi(z) = (sin h(|z|) z/|z|, cos h(|z|))``.  It is
a critical point of the Gaussian-weighted energy

    E(h) = |S^(k-1)| * int (h'^2 + (k-1) sin^2 h / rho^2) exp(-rho^2/4) rho^(k-1) drho

whose Euler-Lagrange equation is

    h'' + ((k-1)/rho - rho/2) h' - (k-1) sin(2h) / (2 rho^2) = 0,   h(0) = 0, h'(0) = a.

Generic shooting parameters blow up like exp(rho^2/4); bounded solutions sit
on the boundary between upward and downward divergence and are located by
bisection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicHermiteSpline

RHO_START = 1e-4
DIVERGENCE_BOUND = 4 * math.pi


class ShootingError(RuntimeError):
    pass


def profile_rhs(k: int):
    def rhs(rho, y):
        h, dh = y
        return [dh, -((k - 1) / rho - rho / 2) * dh + (k - 1) * math.sin(2 * h) / (2 * rho * rho)]
    return rhs


def ode_residual(k: int, rho, h, dh, d2h):
    rho = np.asarray(rho, dtype=float)
    return d2h + ((k - 1) / rho - rho / 2) * dh - (k - 1) * np.sin(2 * h) / (2 * rho ** 2)


def _series_start(k: int, a: float, rho0: float) -> list[float]:
    c3 = (a / 2 - 2 * (k - 1) * a ** 3 / 3) / (2 * k + 4)
    return [a * rho0 + c3 * rho0 ** 3, a + 3 * c3 * rho0 ** 2]


@dataclass
class ShrinkProfile:
    k: int
    a: float
    rho_max: float
    rho: np.ndarray
    h: np.ndarray
    dh: np.ndarray
    status: str = "ok"
    rho_reliable: float | None = None
    _spline: CubicHermiteSpline | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.rho_reliable is None:
            self.rho_reliable = float(self.rho[-1])
        self._spline = CubicHermiteSpline(self.rho, self.h, self.dh)

    @property
    def end_value(self) -> float:
        return float(self.h[-1])

    def _clip(self, rho):
        return np.clip(np.asarray(rho, dtype=float), 0.0, self.rho_reliable)

    def value(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = self._spline(self._clip(rho))
        return np.where(rho <= 0, 0.0, out)

    def derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        inside = rho <= self.rho_reliable
        d = self._spline(self._clip(rho), 1)
        d = np.where(rho <= 0, self.a, d)
        return np.where(inside, d, 0.0)

    def gaussian_energy(self, rho_max: float | None = None) -> float:
        """Gaussian-weighted Dirichlet energy of the map psi on R^k."""
        upper = self.rho_max if rho_max is None else rho_max
        k = self.k
        sphere_area = 2 * math.pi ** (k / 2) / math.gamma(k / 2)

        def integrand(r):
            if r <= 0:
                return 0.0
            h = float(self.value(r))
            dh = float(self.derivative(r))
            return (dh * dh + (k - 1) * math.sin(h) ** 2 / (r * r)) * math.exp(-r * r / 4) * r ** (k - 1)

        breaks = [b for b in (1.0, 2.0, 4.0, float(self.rho_reliable)) if b < upper]
        val, _ = quad(integrand, 0.0, upper, points=breaks or None, limit=400, epsabs=1e-12, epsrel=1e-10)
        return sphere_area * val

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# k={self.k} a={self.a!r} rho_max={self.rho_max!r} "
                     f"rho_reliable={self.rho_reliable!r} status={self.status}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rho", "h", "dh"])
            for r, h, d in zip(self.rho, self.h, self.dh):
                w.writerow([repr(float(r)), repr(float(h)), repr(float(d))])

    @classmethod
    def from_csv(cls, path) -> "ShrinkProfile":
        path = Path(path)
        with path.open() as fh:
            header = fh.readline().lstrip("# ").split()
            meta = dict(item.split("=", 1) for item in header)
            rows = list(csv.reader(fh))[1:]
        arr = np.array(rows, dtype=float)
        return cls(k=int(meta["k"]), a=float(meta["a"]), rho_max=float(meta["rho_max"]),
                   rho=arr[:, 0], h=arr[:, 1], dh=arr[:, 2], status=meta.get("status", "ok"),
                   rho_reliable=float(meta["rho_reliable"]))


def _integrate(k: int, a: float, rho_max: float, rtol: float = 1e-11):
    rho0 = RHO_START

    def escape(r, y):
        return abs(y[0]) - DIVERGENCE_BOUND
    escape.terminal = True

    return solve_ivp(profile_rhs(k), (rho0, rho_max), _series_start(k, a, rho0), method="DOP853",
                     rtol=rtol, atol=1e-13, events=escape, dense_output=True)


def shrink_profile_solve(k: int, a: float, rho_max: float = 8.0, n_table: int = 4001) -> ShrinkProfile:
    """Shoot from ``h(0)=0, h'(0)=a`` and tabulate ``h`` on ``[0, rho_max]``.

    Divergence (``|h|`` exceeding 4 pi) is reported through ``status`` and the
    table is truncated at the escape radius.
    """
    if k < 2:
        raise ValueError("profile dimension k must be >= 2")
    if a == 0:
        rho = np.linspace(0.0, rho_max, n_table)
        return ShrinkProfile(k, 0.0, rho_max, rho, np.zeros_like(rho), np.zeros_like(rho))
    sol = _integrate(k, a, rho_max)
    if sol.status == -1:
        raise ShootingError(f"integration failed: {sol.message}")
    end = float(sol.t[-1])
    status = "ok" if sol.status == 0 else ("diverged_up" if sol.y[0, -1] > 0 else "diverged_down")
    rho = np.linspace(0.0, end, n_table)
    body = sol.sol(np.maximum(rho[1:], RHO_START))
    h = np.concatenate([[0.0], body[0]])
    dh = np.concatenate([[a], body[1]])
    return ShrinkProfile(k, float(a), rho_max, rho, h, dh, status=status)


def divergence_sign(k: int, a: float, rho_max: float) -> int:
    """+1 / -1 for upward / downward escape, 0 if the orbit stays bounded up to rho_max."""
    sol = _integrate(k, a, rho_max)
    if sol.status == 1:
        return 1 if sol.y[0, -1] > 0 else -1
    return 0


def bisect_shooting(k: int, a_lo: float, a_hi: float, rho_max: float = 8.0,
                    tol: float = 1e-13, max_iter: int = 200, sep_tol: float = 1e-6) -> ShrinkProfile:
    """Locate a bounded profile between shooting parameters of opposite divergence.

    The returned profile is trusted up to the radius where the two bracketing
    orbits separate by more than ``sep_tol``; beyond it ``h`` is held constant.
    """
    far = 4 * rho_max
    s_lo, s_hi = divergence_sign(k, a_lo, far), divergence_sign(k, a_hi, far)
    if s_lo == 0 or s_hi == 0 or s_lo == s_hi:
        raise ShootingError(f"bracket [{a_lo}, {a_hi}] does not straddle a bounded orbit "
                            f"(signs {s_lo}, {s_hi})")
    for _ in range(max_iter):
        if a_hi - a_lo <= tol * max(1.0, abs(a_lo)):
            break
        mid = 0.5 * (a_lo + a_hi)
        s = divergence_sign(k, mid, far)
        if s == s_lo:
            a_lo = mid
        elif s == s_hi or s == 0:
            a_hi = mid
    lo = _integrate(k, a_lo, far)
    hi = _integrate(k, a_hi, far)
    grid = np.linspace(RHO_START, min(lo.t[-1], hi.t[-1]), 20001)
    gap = np.abs(lo.sol(grid)[0] - hi.sol(grid)[0])
    bad = np.flatnonzero(gap > sep_tol)
    reliable = float(grid[bad[0]]) if len(bad) else float(grid[-1])
    reliable = min(reliable, rho_max)
    a_star = 0.5 * (a_lo + a_hi)
    sol = _integrate(k, a_star, reliable)
    rho = np.linspace(0.0, reliable, 4001)
    body = sol.sol(np.maximum(rho[1:], RHO_START))
    h = np.concatenate([[0.0], body[0]])
    dh = np.concatenate([[a_star], body[1]])
    status = "bounded" if reliable >= rho_max else "bounded_truncated"
    return ShrinkProfile(k, a_star, rho_max, rho, h, dh, status=status, rho_reliable=reliable)


def find_bracket(k: int, a_max: float = 8.0, n_scan: int = 80, rho_max: float = 8.0) -> tuple[float, float]:
    """First sign change of the divergence direction on a uniform scan of ``a``."""
    grid = np.linspace(a_max / n_scan, a_max, n_scan)
    prev_a, prev_s = None, None
    for a in grid:
        s = divergence_sign(k, float(a), 4 * rho_max)
        if prev_s is not None and s != 0 and prev_s != 0 and s != prev_s:
            return float(prev_a), float(a)
        prev_a, prev_s = float(a), s
    raise ShootingError(f"no sign change of the shooting outcome for k={k} on (0, {a_max}]")


_PROFILE_CACHE: dict[tuple[int, float], ShrinkProfile] = {}


def first_shrinker(k: int, rho_max: float = 8.0) -> ShrinkProfile:
    """Bounded profile from the first sign change of the shooting outcome (cached)."""
    key = (k, rho_max)
    if key not in _PROFILE_CACHE:
        lo, hi = find_bracket(k, rho_max=rho_max)
        _PROFILE_CACHE[key] = bisect_shooting(k, lo, hi, rho_max=rho_max)
    return _PROFILE_CACHE[key]
