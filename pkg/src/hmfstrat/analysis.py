"""Empirical checks: recursive covering, Minkowski slopes, cone splitting and
the epsilon-regularity correlation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .candidates import (Dictionary, InvariancePlane, _fit_cone, _fit_constant, _WinData, best_fit,
                         complement)
from .geometry import GridSpec, SpaceTimePoint, spatial_displacement, tubular_volume
from .profiles import first_shrinker
from .solver import (QuasistaticTrajectory, ShrinkingTrajectory, SplitConeTrajectory)
from .windows import Window, WindowSpec, sample_window


class AnalysisError(ValueError):
    pass


class ConeSplitRefused(ValueError):
    """The extra point lies inside the tube around the invariance set."""


# --- covering ------------------------------------------------------------------

def _pdist_to(points: np.ndarray, c: np.ndarray, period: float | None) -> np.ndarray:
    d = spatial_displacement(points[:, :-1], c[:-1], period)
    return np.maximum(np.sqrt(np.einsum("ij,ij->i", d, d)), np.sqrt(np.abs(points[:, -1] - c[-1])))


def greedy_cover(points: np.ndarray, radius: float, period: float | None = None) -> tuple[list[int], np.ndarray]:
    """Farthest-point covering: centres (indices into ``points``) and the centre slot of each point.

    Centres are pairwise at least ``radius`` apart and every point lies within
    ``radius`` of its assigned centre.
    """
    n = len(points)
    if n == 0:
        return [], np.zeros(0, dtype=int)
    centres = [0]
    dmin = _pdist_to(points, points[0], period)
    owner = np.zeros(n, dtype=int)
    while True:
        far = int(np.argmax(dmin))
        if dmin[far] < radius:
            break
        centres.append(far)
        d = _pdist_to(points, points[far], period)
        closer = d < dmin
        owner[closer] = len(centres) - 1
        dmin = np.minimum(dmin, d)
    return centres, owner


def greedy_packing(points: np.ndarray, radius: float, period: float | None = None) -> int:
    """Maximal ``radius``-separated subset built by a single scan in index order."""
    chosen: list[int] = []
    for i in range(len(points)):
        if not chosen or np.min(_pdist_to(points[chosen], points[i], period)) >= radius:
            chosen.append(i)
    return len(chosen)


@dataclass
class CoverNode:
    center: SpaceTimePoint
    index: int
    radius: float
    depth: int
    good_scale: bool = False
    members: np.ndarray | None = field(default=None, repr=False)
    children: list["CoverNode"] = field(default_factory=list)


@dataclass
class CoverStep:
    depth: int
    center: int
    children: int
    good: bool


@dataclass
class CoverResult:
    roots: list[CoverNode]
    depth_counts: list[int]
    steps: list[CoverStep]
    gamma: float
    root_radius: float

    def leaves(self, depth: int) -> list[CoverNode]:
        out, stack = [], list(self.roots)
        while stack:
            node = stack.pop()
            if node.depth == depth:
                out.append(node)
            else:
                stack.extend(node.children)
        return out

    def step_counts(self, good: bool) -> list[int]:
        return [s.children for s in self.steps if s.good == good]

    def max_bad_steps(self) -> int:
        best = 0
        stack = [(r, 0) for r in self.roots]
        while stack:
            node, bad = stack.pop()
            if not node.children:
                best = max(best, bad)
            for c in node.children:
                stack.append((c, bad + (0 if node.good_scale else 1)))
        return best


def recursive_cover(points: np.ndarray, bits: np.ndarray, gamma: float, beta_max: int,
                    root_radius: float = 1.0, period: float | None = None) -> CoverResult:
    """Cover the labelled points recursively by balls of radius ``root_radius * gamma^beta``.

    ``bits[i, a-1]`` holds ``T_a`` for point ``i``.  The step from depth
    ``beta`` to ``beta + 1`` at a ball centred at ``X`` counts as good when
    ``beta >= 1`` and ``T_beta(X) = 0``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    bits = np.asarray(bits, dtype=int)
    if len(points) == 0:
        return CoverResult([], [0] * (beta_max + 1), [], gamma, root_radius)
    if bits.shape[0] != len(points) or bits.shape[1] < beta_max:
        raise AnalysisError("bit array does not match the points or is shorter than beta_max")
    m = points.shape[1] - 1

    def make(idx: int, members: np.ndarray, depth: int) -> CoverNode:
        X = SpaceTimePoint(tuple(points[idx, :m]), float(points[idx, m]))
        good = depth >= 1 and bits[idx, depth - 1] == 0
        return CoverNode(X, idx, root_radius * gamma ** depth, depth, good, members)

    centres, owner = greedy_cover(points, root_radius, period)
    all_idx = np.arange(len(points))
    roots = [make(c, all_idx[owner == k], 0) for k, c in enumerate(centres)]
    depth_counts = [len(roots)]
    steps: list[CoverStep] = []
    frontier = roots
    for depth in range(beta_max):
        nxt = []
        radius = root_radius * gamma ** (depth + 1)
        for node in frontier:
            sub = points[node.members]
            cs, own = greedy_cover(sub, radius, period)
            for k, c in enumerate(cs):
                child = make(int(node.members[c]), node.members[own == k], depth + 1)
                node.children.append(child)
                nxt.append(child)
            steps.append(CoverStep(depth, node.index, len(cs), node.good_scale))
            node.members = node.members if depth + 1 == beta_max else None
        depth_counts.append(len(nxt))
        frontier = nxt
    return CoverResult(roots, depth_counts, steps, gamma, root_radius)


@dataclass
class ClassCover:
    """Recursive covers of each bit class separately, with pooled step statistics."""

    covers: dict
    gamma: float

    def step_counts(self, good: bool, min_depth: int = 1) -> list[int]:
        """Child counts of good (or bad) steps; the root step carries no bit and is skipped by default."""
        return [s.children for res in self.covers.values() for s in res.steps
                if s.good == good and s.depth >= min_depth]

    def max_bad_steps(self) -> int:
        return max((res.max_bad_steps() for res in self.covers.values()), default=0)

    def leaf_count(self, depth: int) -> int:
        return sum(res.depth_counts[depth] for res in self.covers.values())


def cover_by_class(points: np.ndarray, bits: np.ndarray, gamma: float, beta_max: int,
                   root_radius: float = 1.0, period: float | None = None) -> ClassCover:
    """Split the points by their first ``beta_max`` bits and cover every class on its own.

    Inside one class all points share ``T_beta``, so a good step really is a
    step at a scale where every covered point is nearly self-similar.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    bits = np.asarray(bits, dtype=int).reshape(len(points), -1)
    if bits.shape[1] < beta_max:
        raise AnalysisError("bit array is shorter than beta_max")
    keys, inverse = np.unique(bits[:, :beta_max], axis=0, return_inverse=True)
    covers = {}
    for c, key in enumerate(keys):
        idx = np.flatnonzero(inverse.ravel() == c)
        covers[tuple(int(b) for b in key)] = recursive_cover(points[idx], bits[idx], gamma, beta_max,
                                                             root_radius, period)
    return ClassCover(covers, gamma)


def full_ball_cloud(m: int, n_space: int, n_time: int | None = None) -> np.ndarray:
    """Uniform lattice of points filling P_1(0)."""
    ax = -1 + (np.arange(n_space) + 0.5) * 2 / n_space
    n_time = n_time or n_space * n_space // 2
    tn = -1 + (np.arange(n_time) + 0.5) * 2 / n_time
    mesh = np.meshgrid(*([ax] * m), indexing="ij")
    x = np.stack([g.ravel() for g in mesh], axis=-1)
    x = x[np.einsum("ij,ij->i", x, x) < 1]
    return np.concatenate([np.repeat(x, len(tn), axis=0), np.tile(tn, len(x))[:, None]], axis=1)


_CALIBRATION: dict = {}


def calibrate_packing(m: int, gamma: float, n_space: int = 12, n_time: int = 64) -> float:
    """``c(m)`` with ``count = c(m) gamma^-(m+2)`` for one covering step of a full ball (cached)."""
    key = (m, gamma, n_space, n_time)
    if key not in _CALIBRATION:
        cloud = full_ball_cloud(m, n_space, n_time)
        centres, _ = greedy_cover(cloud, gamma)
        _CALIBRATION[key] = len(centres) * gamma ** (m + 2)
    return _CALIBRATION[key]


def covering_bound(c0: float, gamma: float, m: int, j: int, Q: int, beta: int) -> float:
    """``c0 (c0 gamma^-(m+2))^Q (c0 gamma^-j)^(beta-Q)``."""
    return c0 * (c0 * gamma ** (-(m + 2))) ** Q * (c0 * gamma ** (-j)) ** (beta - Q)


# --- slope fitting ----------------------------------------------------------------

@dataclass
class SlopeFit:
    radii: np.ndarray
    volumes: np.ndarray
    slope: float
    intercept: float
    residual: float
    m: int | None = None

    @property
    def dimension(self) -> float | None:
        return None if self.m is None else (self.m + 2) - self.slope


def fit_power_law(radii, volumes, m: int | None = None) -> SlopeFit:
    radii = np.asarray(radii, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    use = (radii > 0) & (volumes > 0)
    if use.sum() < 4:
        raise AnalysisError(f"need at least 4 radii with positive volume (got {int(use.sum())})")
    x, y = np.log(radii[use]), np.log(volumes[use])
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return SlopeFit(radii, volumes, float(coef[0]), float(coef[1]), resid, m)


def minkowski_fit(S, radii, grid, time_extent=None) -> SlopeFit:
    """Log-log slope of ``Vol(T_r(S))``; ``grid`` is a GridSpec or a callable ``r -> GridSpec``."""
    radii = [float(r) for r in radii]
    vols = []
    m = None
    for r in radii:
        g = grid(r) if callable(grid) else grid
        m = g.m
        vols.append(tubular_volume(S, r, g, time_extent))
    return fit_power_law(radii, vols, m)


# --- cone splitting ------------------------------------------------------------------

@dataclass
class SplitOutcome:
    case: str
    plane: InvariancePlane
    D_before: int
    D_after: int

    @property
    def increment(self) -> int:
        return self.D_after - self.D_before


def _span_with(V: np.ndarray, y: np.ndarray) -> np.ndarray:
    resid = y - V.T @ (V @ y) if len(V) else y.copy()
    return np.vstack([V, resid / np.linalg.norm(resid)]) if len(V) else (resid / np.linalg.norm(resid))[None]


def _dist_to_span(V: np.ndarray, y: np.ndarray) -> float:
    return float(np.linalg.norm(y - V.T @ (V @ y))) if len(V) else float(np.linalg.norm(y))


def cone_split_classify(W: InvariancePlane, Y: SpaceTimePoint, rho: float) -> SplitOutcome:
    """Upgrade of the invariance set given an extra point of self-similarity ``Y``.

    Coordinates are taken relative to the anchor of ``W``; the anchor time is
    0 in those coordinates.  ``Y`` must have parabolic distance at least
    ``rho`` from ``W``.
    """
    if W.distance(Y) < rho:
        raise ConeSplitRefused(f"Y lies within parabolic distance {rho} of the invariance set")
    y = np.array(Y.x) - np.array(W.anchor.x)
    s = Y.t - W.anchor.t
    V = W.V
    near = _dist_to_span(V, y) < rho
    d = W.d
    A = W.anchor
    if W.time_kind == "slice":
        if abs(s) < rho * rho:
            return SplitOutcome("slice_same_time", InvariancePlane(_span_with(V, y), A, "slice"), d, d + 1)
        T = A.t + max(s, 0.0)
        if near:
            case = "slice_in_plane_past" if s < 0 else "slice_in_plane_future"
            return SplitOutcome(case, InvariancePlane(V, A, "halfline", T), d, d)
        return SplitOutcome("slice_off_plane", InvariancePlane(_span_with(V, y), A, "halfline", T), d, d + 1)
    if W.time_kind == "halfline":
        T0 = W.T - A.t
        if near:
            return SplitOutcome("halfline_in_plane", InvariancePlane(V, A, "halfline", A.t + s), d, d)
        return SplitOutcome("halfline_off_plane",
                            InvariancePlane(_span_with(V, y), A, "halfline", A.t + max(s, T0)), d, d + 1)
    return SplitOutcome("static", InvariancePlane(_span_with(V, y), A, "line"), d + 2, d + 3)


def _plane_from_dirs(dirs, m: int) -> np.ndarray:
    return np.asarray(dirs, dtype=float).reshape(-1, m)


@dataclass
class SplitCase:
    """A synthetic field with its a-priori plane at 0 and an extra self-similar point."""

    name: str
    field: object
    W: InvariancePlane
    Y: SpaceTimePoint
    rho: float


def split_cases() -> list[SplitCase]:
    """The seven configurations of the cone-splitting table, each realised exactly."""
    e = np.eye(4)
    o3 = SpaceTimePoint((0.0, 0.0, 0.0), 0.0)
    o4 = SpaceTimePoint((0.0,) * 4, 0.0)
    cone3 = SplitConeTrajectory(3, 2, np.eye(3))
    split4 = SplitConeTrajectory(4, 2, e[:3])
    shrinker = ShrinkingTrajectory(4, 3, first_shrinker(3), e[:3])
    none3, none4 = np.zeros((0, 3)), np.zeros((0, 4))
    return [
        SplitCase("slice_same_time", shrinker, InvariancePlane(none4, o4, "slice"),
                  SpaceTimePoint((0, 0, 0, 0.75), 0.0), 0.5),
        SplitCase("slice_in_plane_past", QuasistaticTrajectory(cone3, 0.0), InvariancePlane(none3, o3, "slice"),
                  SpaceTimePoint((0, 0, 0), -0.5), 0.5),
        SplitCase("slice_in_plane_future", QuasistaticTrajectory(cone3, 0.5), InvariancePlane(none3, o3, "slice"),
                  SpaceTimePoint((0, 0, 0), 0.5), 0.5),
        SplitCase("slice_off_plane", QuasistaticTrajectory(split4, 0.25), InvariancePlane(none4, o4, "slice"),
                  SpaceTimePoint((0, 0, 0, 0.75), 0.25), 0.5),
        SplitCase("halfline_in_plane", QuasistaticTrajectory(cone3, 0.5),
                  InvariancePlane(none3, o3, "halfline", 0.0), SpaceTimePoint((0, 0, 0), 0.5), 0.5),
        SplitCase("halfline_off_plane", QuasistaticTrajectory(split4, 0.0),
                  InvariancePlane(none4, o4, "halfline", 0.0), SpaceTimePoint((0, 0, 0, 0.75), -0.25), 0.5),
        SplitCase("static", split4, InvariancePlane(none4, o4, "line"), SpaceTimePoint((0, 0, 0, 0.75), 0.0), 0.5),
    ]


def _projector(V: np.ndarray, m: int) -> np.ndarray:
    return V.T @ V if len(V) else np.zeros((m, m))


@dataclass
class SplitReport:
    case: str
    predicted: SplitOutcome
    detected_D: int
    detected_kind: str
    detected_T: float | None
    distance_at_Y: float
    plane_error: float
    passed: bool


def _window_spec(field, m: int, w: int) -> WindowSpec:
    return WindowSpec(m, w, w, backward_only=isinstance(field, ShrinkingTrajectory))


def detect_symmetry(window: Window, dictionary: Dictionary, eps: float):
    """Largest level ``j`` whose best fit is within ``eps``, with that fit."""
    found = None
    for j in range(0, dictionary.m + 3):
        fams = [f for f in dictionary.families if f.D >= j]
        if not fams:
            break
        bf = best_fit(window, j, dictionary)
        if bf.distance <= eps:
            found = (j, bf)
        else:
            break
    return found


def cone_split_verify(case: SplitCase, eps: float = 1e-8, w: int = 9,
                      dictionaries: dict | None = None) -> SplitReport:
    """Classify the case, then detect the upgraded symmetry on the exact field."""
    predicted = cone_split_classify(case.W, case.Y, case.rho)
    f = case.field
    m = f.m
    dictionaries = dictionaries if dictionaries is not None else {}
    key = (m, f.n)
    if key not in dictionaries:
        dictionaries[key] = Dictionary(m, f.n)
    dic = dictionaries[key]
    spec = _window_spec(f, m, w)
    win0 = sample_window(f, case.W.anchor, 1.0, spec)
    winY = sample_window(f, case.Y, 1.0, spec)
    dY = best_fit(winY, 0, dic).distance
    det = detect_symmetry(win0, dic, eps)
    if det is None:
        return SplitReport(case.name, predicted, -1, "none", None, dY, math.inf, False)
    j, bf = det
    plane = bf.plane
    kind = plane.time_kind
    T = plane.T
    err = float(np.linalg.norm(_projector(plane.V, m) - _projector(predicted.plane.V, m)))
    ok = (j == predicted.D_after and kind == predicted.plane.time_kind and err < 1e-6 and dY <= eps)
    if kind == "halfline":
        ok &= abs(T - predicted.plane.T) <= spec.h_t + 1e-12
    return SplitReport(case.name, predicted, j, kind, T, dY, err, bool(ok))


# --- quasistatic propagation -------------------------------------------------------------

def perturb_window(win: Window, amplitude: float, seed: int = 0) -> Window:
    """Tangential Gaussian noise of the given amplitude, then projection."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(win.values.shape)
    noise -= np.sum(noise * win.values, axis=-1, keepdims=True) * win.values
    v = win.values + amplitude * noise
    nrm = np.linalg.norm(v, axis=-1, keepdims=True)
    v = np.where(nrm > 0, v / np.where(nrm > 0, nrm, 1.0), 0.0)
    return Window(win.spec, win.base, win.scale, v, win.valid, False, dict(win.meta))


def static_plane_distance(win: Window, V: np.ndarray) -> float:
    """Distance to the best static map invariant along ``V`` (constant if ``V`` is everything)."""
    d = _WinData.from_window(win)
    m = win.spec.m
    P = complement(V, m)
    if P.shape[0] == 0:
        return _fit_constant(d).dist
    return min(_fit_cone(d, P).dist, _fit_constant(d).dist)


def quasistatic_propagation_check(traj, W: InvariancePlane, Y: SpaceTimePoint, gamma: float, eps: float,
                                  spec: WindowSpec | None = None, noise: float = 0.0, seed: int = 0):
    """Is the map close to a static map along ``(y + V) x R`` at ``Y`` and scale ``gamma``?

    Returns ``(passed, distance)``.  Requires ``s <= T - (2 gamma)^2``.
    """
    if W.time_kind != "halfline":
        raise AnalysisError("quasistatic propagation needs a half-line invariance set")
    if Y.t > W.T - (2 * gamma) ** 2 + 1e-12:
        raise AnalysisError(f"hypothesis s <= T - (2 gamma)^2 fails (s={Y.t}, T={W.T}, gamma={gamma})")
    spec = spec or WindowSpec(traj.m, 9, 9)
    win = sample_window(traj, Y, gamma, spec)
    if noise > 0:
        win = perturb_window(win, noise, seed)
    dist = static_plane_distance(win, W.V)
    return dist < eps, dist


# --- epsilon regularity --------------------------------------------------------------

@dataclass
class EpsRegReport:
    eps: list[float]
    violations: list[int]
    close: list[int]
    n_points: int
    distances: np.ndarray
    ratios: np.ndarray

    @property
    def fractions(self) -> list[float]:
        return [v / self.n_points if self.n_points else 0.0 for v in self.violations]


def eps_regularity_correlation(traj, cloud: list[SpaceTimePoint], j: int, radii, eps_list,
                               dictionary: Dictionary, records, spec: WindowSpec | None = None) -> EpsRegReport:
    """Pairs (distance to level-j maps at scale 2r, r_u / r) and violation counts per epsilon."""
    spec = spec or WindowSpec(traj.m, 9, 9)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(cloud),))
    dists, ratios = [], []
    for X, r, rec in zip(cloud, radii, records):
        win = sample_window(traj, X, 2 * r, spec)
        dists.append(best_fit(win, j, dictionary).distance)
        ratios.append(rec.r_u / r)
    dists = np.array(dists)
    ratios = np.array(ratios)
    eps_list = sorted(float(e) for e in eps_list)[::-1]
    viol = [int(np.sum((dists < e) & (ratios < 1.0))) for e in eps_list]
    close = [int(np.sum(dists < e)) for e in eps_list]
    return EpsRegReport(eps_list, viol, close, len(cloud), dists, ratios)
