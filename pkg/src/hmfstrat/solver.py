"""Harmonic map flow on a flat torus, plus exact self-similar trajectories.

Every trajectory answers the same queries: values, spatial gradients, time
derivatives and Hessians at arbitrary space-time points, each with a validity
mask.  Simulated trajectories interpolate recorded snapshots; analytic ones
evaluate closed forms so that oracle tests carry no time-discretisation error.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .geometry import GridSpec, spatial_displacement
from .profiles import ShrinkProfile, first_shrinker
from .target import ProjectionBreakdown, central_gradient, laplacian, project

log = logging.getLogger(__name__)

MAGIC = b"HMF1"
HEADER = struct.Struct("<4sIIIdd")
AXIS_EPS = 1e-12


class TrajectoryRangeError(ValueError):
    pass


class UnsupportedAnalytic(ValueError):
    pass


@dataclass
class Snapshot:
    grid: GridSpec
    t: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = self.grid.shape
        if self.values.shape[:-1] != expected:
            self.values = self.values.reshape(expected + (self.values.shape[-1],))

    @property
    def n(self) -> int:
        return self.values.shape[-1] - 1

    def max_norm_defect(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.values, axis=-1) - 1.0)))


def dirichlet_energy(values: np.ndarray, h: float, m: int) -> float:
    """Discrete Dirichlet energy ``sum |D^+ u|^2 h^m`` with forward differences."""
    total = 0.0
    for ax in range(m):
        d = (np.roll(values, -1, axis=ax) - values) / h
        total += float(np.sum(d * d))
    return total * h ** m


def max_neighbour_jump(values: np.ndarray, m: int) -> float:
    return max(float(np.max(np.linalg.norm(np.roll(values, -1, axis=ax) - values, axis=-1)))
               for ax in range(m))


def cfl_dt(h: float, m: int, sigma: float = 0.25) -> float:
    if not 0 < sigma <= 0.5:
        raise ValueError("CFL safety factor must satisfy 0 < sigma <= 0.5")
    return sigma * h * h / (2 * m)


def step(s: Snapshot, dt: float) -> Snapshot:
    """One projected explicit step of ``u_t = Delta u + |grad u|^2 u``.

    The discrete energy density is taken as ``-u . Delta_h u`` so the update
    is tangent to the sphere; the subsequent normalisation is then a radial
    retraction from outside the unit ball.
    """
    g = s.grid
    if dt > cfl_dt(g.h, g.m, 0.5) * (1 + 1e-12):
        raise ValueError(f"dt={dt} violates the stability bound {cfl_dt(g.h, g.m, 0.5)}")
    u = s.values
    lap = laplacian(u, g.h, g.m)
    density = -np.sum(u * lap, axis=-1, keepdims=True)
    v = u + dt * (lap + density * u)
    return Snapshot(g, s.t + dt, project(v))


class Trajectory:
    """Common interface.  Subclasses implement :meth:`_fields`."""

    m: int
    n: int
    period: float | None = None
    is_static: bool = False
    source: str = "analytic"

    @property
    def t_range(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    def check_time_range(self, lo: float, hi: float) -> None:
        a, b = self.t_range
        if lo < a - 1e-12 or hi > b + 1e-12:
            raise TrajectoryRangeError(f"time interval [{lo}, {hi}] outside recorded range [{a}, {b}]")

    def evaluate(self, x, t):
        """Values and validity mask at points ``x`` (N, m), ``t`` (N,)."""
        f = self._fields(*self._prep(x, t), order=0)
        return f["u"], f["valid"]

    def derivatives(self, x, t, hessian: bool = False) -> dict:
        return self._fields(*self._prep(x, t), order=2 if hessian else 1)

    def _prep(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],)).copy()
        return x, t

    def _fields(self, x, t, order):
        raise NotImplementedError

    def manifest(self) -> dict:
        raise NotImplementedError


def _embed(v: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (dim,))
    out[..., : v.shape[-1]] = v
    return out


def _orthonormal_rows(basis, m: int) -> np.ndarray:
    P = np.atleast_2d(np.asarray(basis, dtype=float))
    if P.shape[1] != m:
        raise ValueError(f"transverse basis must have {m} columns")
    q, _ = np.linalg.qr(P.T)
    return q.T.copy()


class ConstantTrajectory(Trajectory):
    is_static = True

    def __init__(self, m: int, p):
        self.m = m
        self.p = project(np.asarray(p, dtype=float))
        self.n = len(self.p) - 1

    def _fields(self, x, t, order):
        N = len(x)
        out = {"u": np.broadcast_to(self.p, (N, self.n + 1)).copy(), "valid": np.ones(N, bool)}
        if order >= 1:
            out["grad"] = np.zeros((N, self.m, self.n + 1))
            out["dt"] = np.zeros((N, self.n + 1))
        if order >= 2:
            out["hess"] = np.zeros((N, self.m, self.m, self.n + 1))
        return out

    def manifest(self) -> dict:
        return {"kind": "constant", "m": self.m, "n": self.n, "p": self.p.tolist()}


class SplitConeTrajectory(Trajectory):
    """Static ``u(x) = Q (P(x-c) / |P(x-c)|)`` with ``P`` a k x m orthonormal projection.

    ``k = 3`` into S^2 is the static cone ``y/|y|``; ``k = 2`` is the planar
    vortex into a great circle.  Invariant along ``ker P``.
    """

    is_static = True

    def __init__(self, m: int, n: int, transverse, rotation=None, center=None):
        self.m, self.n = m, n
        self.P = _orthonormal_rows(transverse, m)
        self.k = self.P.shape[0]
        if self.k < 2 or self.k > n + 1:
            raise UnsupportedAnalytic(f"split cone needs 2 <= k <= n+1 (k={self.k}, n={n})")
        self.Q = np.eye(n + 1) if rotation is None else np.asarray(rotation, dtype=float)
        self.center = np.zeros(m) if center is None else np.asarray(center, dtype=float)

    def _fields(self, x, t, order):
        y = x - self.center
        z = y @ self.P.T
        rho = np.linalg.norm(z, axis=1)
        valid = rho > AXIS_EPS
        safe = np.where(valid, rho, 1.0)
        zh = z / safe[:, None]
        zh[~valid] = 0.0
        dim = self.n + 1
        out = {"u": _embed(zh, dim) @ self.Q.T, "valid": valid}
        if order >= 1:
            k = self.k
            G = (np.eye(k)[None] - zh[:, :, None] * zh[:, None, :]) / safe[:, None, None]
            grad = np.einsum("bi,nab->nia", self.P, G)
            out["grad"] = _embed(grad, dim) @ self.Q.T
            out["grad"][~valid] = 0.0
            out["dt"] = np.zeros((len(x), dim))
        if order >= 2:
            k = self.k
            I = np.eye(k)
            H = (-np.einsum("ab,nc->nabc", I, zh) - np.einsum("ac,nb->nabc", I, zh)
                 - np.einsum("bc,na->nabc", I, zh)
                 + 3 * np.einsum("na,nb,nc->nabc", zh, zh, zh)) / (safe ** 2)[:, None, None, None]
            hess = np.einsum("bi,cj,nabc->nija", self.P, self.P, H)
            out["hess"] = _embed(hess, dim) @ self.Q.T
            out["hess"][~valid] = 0.0
        return out

    def manifest(self) -> dict:
        return {"kind": "split_cone", "m": self.m, "n": self.n, "transverse": self.P.tolist(),
                "rotation": self.Q.tolist(), "center": self.center.tolist()}


class QuasistaticTrajectory(Trajectory):
    """Equal to a static map for ``t <= T`` and to a constant ``p`` afterwards."""

    def __init__(self, static: Trajectory, T: float = 0.0, p=None):
        if not static.is_static:
            raise UnsupportedAnalytic("quasistatic truncation needs a static map")
        self.static = static
        self.m, self.n = static.m, static.n
        self.T = float(T)
        if p is None:
            p = np.zeros(self.n + 1)
            p[-1] = 1.0
        self.p = project(np.asarray(p, dtype=float))

    def _fields(self, x, t, order):
        out = self.static._fields(x, t, order)
        late = t > self.T
        if np.any(late):
            out["u"][late] = self.p
            out["valid"][late] = True
            for key in ("grad", "dt", "hess"):
                if key in out:
                    out[key][late] = 0.0
        return out

    def manifest(self) -> dict:
        return {"kind": "quasistatic", "T": self.T, "p": self.p.tolist(), "static": self.static.manifest()}


class ShrinkingTrajectory(Trajectory):
    """``u(x, t) = Q psi(P(x-c)/sqrt(t0 - t))`` for ``t < t0``; undefined afterwards."""

    def __init__(self, m: int, n: int, profile: ShrinkProfile, transverse=None, rotation=None,
                 center=None, t0: float = 0.0):
        self.m, self.n = m, n
        self.profile = profile
        k = profile.k
        if n < k:
            raise UnsupportedAnalytic(f"shrinking profile into S^{k} needs n >= {k}")
        self.P = _orthonormal_rows(np.eye(m)[:k] if transverse is None else transverse, m)
        if self.P.shape[0] != k:
            raise UnsupportedAnalytic("transverse plane dimension must match profile dimension")
        self.Q = np.eye(n + 1) if rotation is None else np.asarray(rotation, dtype=float)
        self.center = np.zeros(m) if center is None else np.asarray(center, dtype=float)
        self.t0 = float(t0)

    @property
    def t_range(self):
        return (-math.inf, self.t0)

    def _psi(self, z):
        k = self.profile.k
        rho = np.linalg.norm(z, axis=1)
        small = rho < 1e-9
        safe = np.where(small, 1.0, rho)
        zh = z / safe[:, None]
        h = self.profile.value(rho)
        dh = self.profile.derivative(rho)
        sin_over = np.where(small, self.profile.a, np.sin(h) / safe)
        val = np.concatenate([np.sin(h)[:, None] * zh, np.cos(h)[:, None]], axis=1)
        val[small] = 0.0
        val[small, k] = 1.0
        I = np.eye(k)
        top = (dh * np.cos(h))[:, None, None] * zh[:, :, None] * zh[:, None, :] \
            + sin_over[:, None, None] * (I[None] - zh[:, :, None] * zh[:, None, :])
        top[small] = self.profile.a * I
        bottom = (-np.sin(h) * dh)[:, None] * zh
        D = np.concatenate([top, bottom[:, None, :]], axis=1)
        return val, D

    def _fields(self, x, t, order):
        dim = self.n + 1
        tau = self.t0 - t
        valid = tau > 0
        s = np.sqrt(np.where(valid, tau, 1.0))
        z = ((x - self.center) @ self.P.T) / s[:, None]
        val, D = self._psi(z)
        out = {"u": _embed(val, dim) @ self.Q.T, "valid": valid}
        out["u"][~valid] = 0.0
        if order >= 1:
            grad = np.einsum("bi,nab->nia", self.P, D) / s[:, None, None]
            out["grad"] = _embed(grad, dim) @ self.Q.T
            dt = np.einsum("nab,nb->na", D, z) / (2 * np.where(valid, tau, 1.0))[:, None]
            out["dt"] = _embed(dt, dim) @ self.Q.T
            out["grad"][~valid] = 0.0
            out["dt"][~valid] = 0.0
        if order >= 2:
            out["hess"] = _numeric_hessian(self, x, t)
        return out

    def manifest(self) -> dict:
        return {"kind": "shrinking", "m": self.m, "n": self.n, "k": self.profile.k, "a": self.profile.a,
                "transverse": self.P.tolist(), "rotation": self.Q.tolist(),
                "center": self.center.tolist(), "t0": self.t0}


def _numeric_hessian(traj: Trajectory, x, t, eps: float = 1e-5) -> np.ndarray:
    cols = []
    for i in range(traj.m):
        e = np.zeros(traj.m)
        e[i] = eps
        gp = traj._fields(x + e, t, 1)["grad"]
        gm = traj._fields(x - e, t, 1)["grad"]
        cols.append((gp - gm) / (2 * eps))
    return np.stack(cols, axis=2)


class RescaledTrajectory(Trajectory):
    """Parabolic rescaling ``u_lam(x, t) = u(x / lam, t / lam^2)``."""

    def __init__(self, base: Trajectory, lam: float):
        self.base, self.lam = base, float(lam)
        self.m, self.n = base.m, base.n
        self.is_static = base.is_static
        self.period = None if base.period is None else base.period * lam

    @property
    def t_range(self):
        a, b = self.base.t_range
        return (a * self.lam ** 2, b * self.lam ** 2)

    def _fields(self, x, t, order):
        out = dict(self.base._fields(x / self.lam, t / self.lam ** 2, order))
        if "grad" in out:
            out["grad"] = out["grad"] / self.lam
            out["dt"] = out["dt"] / self.lam ** 2
        if "hess" in out:
            out["hess"] = out["hess"] / self.lam ** 2
        return out

    def manifest(self) -> dict:
        return {"kind": "rescaled", "lam": self.lam, "base": self.base.manifest()}


class SimulatedTrajectory(Trajectory):
    """Recorded snapshots with multilinear-in-space, linear-in-time interpolation."""

    source = "simulated"

    def __init__(self, snapshots: list[Snapshot], dt: float, flags: dict | None = None,
                 energies: list[float] | None = None):
        if not snapshots:
            raise ValueError("trajectory needs at least one snapshot")
        times = np.array([s.t for s in snapshots])
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        self.snapshots = snapshots
        self.times = times
        self.dt = dt
        self.grid = snapshots[0].grid
        self.m, self.n = self.grid.m, snapshots[0].n
        self.period = self.grid.period if self.grid.periodic else None
        self.flags = dict(flags or {"blown_up": False})
        self.energies = list(energies or [])
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    @property
    def t_range(self):
        return (float(self.times[0]), float(self.times[-1]))

    def _field(self, name: str, k: int) -> np.ndarray:
        key = (name, k)
        if key not in self._cache:
            g = self.grid
            u = self.snapshots[k].values
            if name == "u":
                f = u
            elif name == "grad":
                f = central_gradient(u, g.h, g.m)
            elif name == "dt":
                k1 = min(k + 1, len(self.snapshots) - 1)
                k0 = k1 - 1 if k1 > 0 else 0
                if k1 == k0:
                    f = np.zeros_like(u)
                else:
                    f = (self.snapshots[k1].values - self.snapshots[k0].values) / (self.times[k1] - self.times[k0])
            elif name == "hess":
                grad = central_gradient(u, g.h, g.m)
                f = np.stack([(np.roll(grad, -1, axis=ax) - np.roll(grad, 1, axis=ax)) / (2 * g.h)
                              for ax in range(g.m)], axis=-3)
            else:
                raise KeyError(name)
            if len(self._cache) > 96:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = f.reshape(g.n_cells ** g.m, -1)
        return self._cache[key]

    def _space_weights(self, x):
        g = self.grid
        f = (x - g.origin) / g.h - 0.5
        i0 = np.floor(f).astype(np.int64)
        w = f - i0
        strides = g.n_cells ** np.arange(g.m - 1, -1, -1)
        corners = []
        for c in range(2 ** g.m):
            bits = np.array([(c >> (g.m - 1 - a)) & 1 for a in range(g.m)])
            idx = np.mod(i0 + bits, g.n_cells) if g.periodic else np.clip(i0 + bits, 0, g.n_cells - 1)
            wt = np.prod(np.where(bits == 1, w, 1 - w), axis=1)
            corners.append((idx @ strides, wt))
        return corners

    def _interp(self, name, corners, k, theta, ks):
        out = None
        for kk in np.unique(ks):
            sel = ks == kk
            fa = self._field(name, int(kk))
            fb = self._field(name, int(min(kk + 1, len(self.times) - 1)))
            val_a = sum(fa[idx[sel]] * wt[sel, None] for idx, wt in corners)
            val_b = sum(fb[idx[sel]] * wt[sel, None] for idx, wt in corners)
            th = theta[sel, None]
            block = (1 - th) * val_a + th * val_b
            if out is None:
                out = np.empty((len(ks), block.shape[1]))
            out[sel] = block
        return out

    def _fields(self, x, t, order):
        a, b = self.t_range
        if np.any(t < a - 1e-12) or np.any(t > b + 1e-12):
            raise TrajectoryRangeError(f"query times outside recorded range [{a}, {b}]")
        N = len(x)
        if len(self.times) == 1:
            ks = np.zeros(N, dtype=np.int64)
            theta = np.zeros(N)
        else:
            ks = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
            theta = (t - self.times[ks]) / (self.times[ks + 1] - self.times[ks])
        corners = self._space_weights(x)
        dim = self.n + 1
        out = {"u": self._interp("u", corners, None, theta, ks), "valid": np.ones(N, bool)}
        if order >= 1:
            out["grad"] = self._interp("grad", corners, None, theta, ks).reshape(N, self.m, dim)
            dt_theta = np.zeros(N)
            out["dt"] = self._interp("dt", corners, None, dt_theta, ks)
        if order >= 2:
            out["hess"] = self._interp("hess", corners, None, theta, ks).reshape(N, self.m, self.m, dim)
        return out

    def manifest(self) -> dict:
        return {"kind": "simulated", "m": self.m, "n": self.n, "grid": self.grid.to_dict(), "dt": self.dt,
                "flags": self.flags}


def run(u0: Snapshot, t_end: float, record_every: int = 1, dt: float | None = None,
        sigma: float = 0.25, jump_limit: float = 1.0) -> SimulatedTrajectory:
    """Integrate to ``t_end``; breakdown truncates the trajectory and sets the blowup flags."""
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    g = u0.grid
    dt_max = cfl_dt(g.h, g.m, sigma) if dt is None else dt
    nsteps = max(1, int(math.ceil(t_end / dt_max - 1e-9)))
    dt = t_end / nsteps
    cur = Snapshot(g, u0.t, project(u0.values))
    snaps = [cur]
    energies = [dirichlet_energy(cur.values, g.h, g.m)]
    flags = {"blown_up": False, "blowup_time": None, "reason": None, "steps": 0}
    for k in range(1, nsteps + 1):
        try:
            nxt = step(cur, dt)
        except ProjectionBreakdown as exc:
            flags.update(blown_up=True, blowup_time=cur.t, reason=f"projection breakdown at cell {exc.index}")
            break
        cur = nxt
        flags["steps"] = k
        if max_neighbour_jump(cur.values, g.m) > jump_limit:
            flags.update(blown_up=True, blowup_time=cur.t, reason="gradient exceeds 1/h")
            snaps.append(cur)
            energies.append(dirichlet_energy(cur.values, g.h, g.m))
            break
        if k % record_every == 0 or k == nsteps:
            snaps.append(cur)
            energies.append(dirichlet_energy(cur.values, g.h, g.m))
    if flags["blown_up"]:
        log.info("trajectory flagged blown up at t=%s (%s)", flags["blowup_time"], flags["reason"])
    return SimulatedTrajectory(snaps, dt, flags, energies)


def smooth_random_data(grid: GridSpec, n: int, modes: int = 2, amplitude: float = 0.6,
                       seed: int = 0) -> Snapshot:
    """Projected sum of low Fourier modes around the north pole; periodic and seeded."""
    rng = np.random.default_rng(seed)
    x = grid.centers()
    k0 = 2 * math.pi / grid.period
    vals = np.zeros((len(x), n + 1))
    vals[:, -1] = 1.0
    for _ in range(modes):
        kvec = k0 * rng.integers(-2, 3, size=grid.m)
        phase = rng.uniform(0, 2 * math.pi)
        coef = rng.standard_normal(n + 1) * amplitude / modes
        vals += np.cos(x @ kvec + phase)[:, None] * coef[None, :]
    nrm = np.linalg.norm(vals, axis=-1, keepdims=True)
    if np.min(nrm) < 0.1:
        vals[:, -1] += 0.2
    return Snapshot(grid, 0.0, project(vals).reshape(grid.shape + (n + 1,)))


def make_analytic(kind: str, m: int, n: int = 2, **params) -> Trajectory:
    """Exact trajectories: ``constant``, ``static_cone``, ``quasistatic_cone``,
    ``shrinking_profile``, ``split_cone``."""
    if kind == "constant":
        p = params.get("p")
        if p is None:
            p = np.eye(n + 1)[-1]
        return ConstantTrajectory(m, p)
    if kind in ("static_cone", "quasistatic_cone", "split_cone"):
        k = int(params.get("k", 3))
        if kind != "split_cone" and (m < 3 or n < 2):
            raise UnsupportedAnalytic(f"{kind} requires m >= 3 and n >= 2 (got m={m}, n={n})")
        transverse = params.get("transverse", np.eye(m)[:k])
        cone = SplitConeTrajectory(m, n, transverse, params.get("rotation"), params.get("center"))
        if kind == "quasistatic_cone":
            return QuasistaticTrajectory(cone, params.get("T", 0.0), params.get("p"))
        return cone
    if kind == "shrinking_profile":
        profile = params.get("profile")
        if profile is None:
            k = int(params.get("k", 3))
            if not 3 <= k <= 6:
                raise UnsupportedAnalytic("equivariant shrinking profiles are generated for 3 <= k <= 6")
            profile = first_shrinker(k)
        if m < profile.k:
            raise UnsupportedAnalytic(f"profile dimension {profile.k} exceeds m={m}")
        return ShrinkingTrajectory(m, n, profile, params.get("transverse"), params.get("rotation"),
                                   params.get("center"), params.get("t0", 0.0))
    raise UnsupportedAnalytic(f"unknown analytic kind {kind!r}")


def trajectory_from_manifest(info: dict) -> Trajectory:
    kind = info["kind"]
    if kind == "constant":
        return ConstantTrajectory(info["m"], info["p"])
    if kind == "split_cone":
        return SplitConeTrajectory(info["m"], info["n"], info["transverse"], info["rotation"], info["center"])
    if kind == "quasistatic":
        return QuasistaticTrajectory(trajectory_from_manifest(info["static"]), info["T"], info["p"])
    if kind == "shrinking":
        profile = first_shrinker(info["k"])
        return ShrinkingTrajectory(info["m"], info["n"], profile, info["transverse"], info["rotation"],
                                   info["center"], info["t0"])
    if kind == "rescaled":
        return RescaledTrajectory(trajectory_from_manifest(info["base"]), info["lam"])
    raise UnsupportedAnalytic(f"cannot rebuild analytic kind {kind!r}")


# --- persistence -----------------------------------------------------------

def write_snapshot(path, snap: Snapshot) -> None:
    g = snap.grid
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, g.m, snap.n, g.n_cells, g.h, snap.t))
        fh.write(np.ascontiguousarray(snap.values, dtype="<f8").tobytes())


def read_snapshot(path, periodic: bool = True, origin: float | None = None) -> Snapshot:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing snapshot file: {path}")
    raw = path.read_bytes()
    magic, m, n, n_cells, h, t = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    count = n_cells ** m * (n + 1)
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=HEADER.size)
    grid = GridSpec(m, n_cells, h, periodic, origin)
    return Snapshot(grid, t, values.reshape(grid.shape + (n + 1,)).copy())


def save_trajectory(traj: Trajectory, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "HMF1", "source": traj.source, "m": traj.m, "n": traj.n}
    if isinstance(traj, SimulatedTrajectory):
        files = []
        for i, s in enumerate(traj.snapshots):
            name = f"snap_{i:05d}.hmf"
            write_snapshot(directory / name, s)
            files.append({"file": name, "t": s.t})
        manifest.update(dt=traj.dt, grid=traj.grid.to_dict(), snapshots=files, flags=traj.flags,
                        energies=traj.energies)
    else:
        manifest.update(dt=None, snapshots=[], flags={"blown_up": False}, analytic=traj.manifest())
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_trajectory(directory) -> Trajectory:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"missing trajectory manifest: {mpath}")
    info = json.loads(mpath.read_text())
    if info["source"] == "analytic":
        return trajectory_from_manifest(info["analytic"])
    g = info["grid"]
    snaps = [read_snapshot(directory / e["file"], g["periodic"], g["origin"]) for e in info["snapshots"]]
    return SimulatedTrajectory(snaps, info["dt"], info.get("flags"), info.get("energies"))
