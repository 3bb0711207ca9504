"""Rescaled windows ``u_{X,s}(x, t) = u(x0 + s x, t0 + s^2 t)`` over P_1(0).

Samples sit at cell centres of a tensor grid on [-1, 1]^m x (-1, 1); only
nodes with ``|x| < 1`` belong to the window domain.  Odd node counts make the
origin a node.  All windows built from one :class:`WindowSpec` share the same
quadrature, so their distances are comparable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import SpaceTimePoint, ball_volume
from .target import BREAKDOWN_NORM

MAX_MASKED_FRACTION = 0.05


class WindowRejected(ValueError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    m: int
    w: int = 17
    w_t: int = 17
    backward_only: bool = False

    def __post_init__(self):
        if self.w < 3 or self.w_t < 1:
            raise ValueError("window needs w >= 3 spatial and w_t >= 1 time nodes")

    @property
    def h(self) -> float:
        return 2.0 / self.w

    @property
    def h_t(self) -> float:
        return 2.0 / self.w_t

    @property
    def volume(self) -> float:
        return ball_volume(1.0, self.m)

    def to_dict(self) -> dict:
        return {"m": self.m, "w": self.w, "w_t": self.w_t, "backward_only": self.backward_only}


@lru_cache(maxsize=32)
def _layout(spec: WindowSpec):
    ax = -1.0 + (np.arange(spec.w) + 0.5) * spec.h
    tn = -1.0 + (np.arange(spec.w_t) + 0.5) * spec.h_t
    mesh = np.meshgrid(*([ax] * spec.m), indexing="ij")
    x = np.stack([g.ravel() for g in mesh], axis=-1)
    in_ball = np.einsum("ij,ij->i", x, x) < 1.0
    x.setflags(write=False)
    return ax, tn, x, in_ball


def window_nodes(spec: WindowSpec):
    """Spatial axis nodes, time nodes, all spatial tensor nodes (w^m, m), in-ball flag."""
    return _layout(spec)


def domain_mask(spec: WindowSpec) -> np.ndarray:
    """Domain flag on the (w^m, w_t) tensor layout."""
    _, tn, _, in_ball = _layout(spec)
    tmask = tn < 0 if spec.backward_only else np.ones_like(tn, dtype=bool)
    return in_ball[:, None] & tmask[None, :]


@dataclass
class Window:
    """Samples of a rescaled map, laid out as (w^m spatial nodes, w_t slices, n+1)."""

    spec: WindowSpec
    base: SpaceTimePoint | None
    scale: float
    values: np.ndarray
    valid: np.ndarray
    static: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def domain(self) -> np.ndarray:
        return domain_mask(self.spec)

    @property
    def usable(self) -> np.ndarray:
        return self.valid & self.domain

    @property
    def masked_fraction(self) -> float:
        dom = self.domain
        return float(np.sum(dom & ~self.valid) / max(1, np.sum(dom)))

    def rotated(self, Q) -> "Window":
        Q = np.asarray(Q, dtype=float)
        return Window(self.spec, self.base, self.scale, self.values @ Q.T, self.valid, self.static,
                      dict(self.meta))


def _clean(values: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values = np.where(np.isfinite(values), values, 0.0)
    norm = np.linalg.norm(values, axis=-1)
    valid = valid & (norm > BREAKDOWN_NORM)
    safe = np.where(valid, norm, 1.0)
    values = values / safe[..., None]
    values[~valid] = 0.0
    return values, valid


def sample_window(traj, X: SpaceTimePoint, s: float, spec: WindowSpec | None = None,
                  max_masked: float = MAX_MASKED_FRACTION) -> Window:
    """Resample ``traj`` around ``X`` at scale ``s`` onto the reference window grid."""
    if s <= 0:
        raise ValueError("window scale must be positive")
    spec = spec or WindowSpec(traj.m)
    if spec.m != traj.m or X.m != traj.m:
        raise GridMismatch(f"window dimension {spec.m} vs trajectory {traj.m} vs point {X.m}")
    if traj.period is not None and s > traj.period / 4 * (1 + 1e-12):
        raise WindowRejected(f"scale {s} exceeds a quarter of the torus period {traj.period}")
    t0 = X.t
    _, tn, xn, in_ball = _layout(spec)
    dom = domain_mask(spec)
    cols = np.flatnonzero(dom.any(axis=0))
    if getattr(traj, "source", "analytic") == "simulated":
        traj.check_time_range(t0 + s * s * tn[cols[0]], t0 + s * s * tn[cols[-1]])
    pts = np.array(X.x) + s * xn[in_ball]
    n_t, dim = len(tn), traj.n + 1
    values = np.zeros((xn.shape[0], n_t, dim))
    valid = np.zeros((xn.shape[0], n_t), dtype=bool)
    if traj.is_static:
        u, ok = _clean(*traj.evaluate(pts, np.full(len(pts), t0)))
        values[in_ball] = u[:, None, :]
        valid[in_ball] = ok[:, None]
    else:
        P = np.repeat(pts, len(cols), axis=0)
        T = np.tile(t0 + s * s * tn[cols], len(pts))
        u, ok = _clean(*traj.evaluate(P, T))
        block_v = np.zeros((len(pts), n_t, dim))
        block_ok = np.zeros((len(pts), n_t), dtype=bool)
        block_v[:, cols] = u.reshape(len(pts), len(cols), dim)
        block_ok[:, cols] = ok.reshape(len(pts), len(cols))
        values[in_ball] = block_v
        valid[in_ball] = block_ok
    win = Window(spec, X, s, values, valid & dom, traj.is_static)
    frac = win.masked_fraction
    if frac > max_masked:
        raise WindowRejected(f"masked fraction {frac:.3f} exceeds {max_masked}")
    return win


def weighted_mean(win: Window) -> np.ndarray:
    use = win.usable
    return win.values[use].sum(axis=0) / max(1, use.sum())


def l2_distance_sq(a: Window, b) -> float:
    """Midpoint approximation of ``int_{P_1} |a - b|^2``.

    Only samples valid in both arguments enter, and the normalisation uses the
    same set, so the result is ``Vol(P_1)`` times the jointly-valid mean.
    ``b`` may be a window or any object with ``evaluate_window(spec)``.
    """
    if not isinstance(b, Window):
        b = b.evaluate_window(a.spec)
    if a.spec.m != b.spec.m or a.spec.w != b.spec.w or a.spec.w_t != b.spec.w_t:
        raise GridMismatch("windows were sampled on different grids")
    joint = a.usable & b.usable
    count = int(joint.sum())
    if count == 0:
        raise WindowRejected("windows share no valid samples")
    diff = a.values[joint] - b.values[joint]
    return float(a.spec.volume * np.sum(diff * diff) / count)
