"""Scale bit-vectors, stratum membership and the regularity scale.

A point's scale bits record which annuli ``W_{gamma^(a-q), gamma^(a+q)}``
carry Struwe energy above ``delta``.  All annuli of one point are assembled
from a single list of shells, so the pigeonhole bound on the number of
bad scales holds exactly against the point's own total.

The regularity scale has two evaluators: a per-point bisection over the
probe nodes of ``P_r(X)``, and a field version built on the identity

    r_u(X) = min_Y max(d(X, Y), l(Y)),   l = 2 / (|grad u| + sqrt(|grad u|^2 + 4 |hess u|)),

where ``l(Y)`` is the largest ``r`` with ``r|grad u(Y)| + r^2|hess u(Y)| <= 1``.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .candidates import Dictionary, EmptyDictionary, best_fit
from .energies import struwe_shells
from .geometry import GridSpec, SpaceTimePoint, spatial_displacement
from .solver import SimulatedTrajectory, TrajectoryRangeError
from .windows import WindowRejected, WindowSpec, sample_window


class InvariantViolation(AssertionError):
    pass


class UnresolvableScale(ValueError):
    pass


@dataclass(frozen=True)
class ScaleParams:
    gamma: float
    q: int
    delta: float
    beta: int

    def __post_init__(self):
        if not 0 < self.gamma < 0.5:
            raise ValueError(f"gamma must satisfy 0<gamma<1/2 (got {self.gamma})")
        if self.q < 0 or self.beta < 1:
            raise ValueError("need q >= 0 and beta >= 1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def finest(self) -> float:
        return self.gamma ** (self.beta + self.q)

    def Q(self, lambda2: float) -> int:
        """``floor((2q+1) Lambda_2 / delta) + q``."""
        return int(math.floor((2 * self.q + 1) * lambda2 / self.delta)) + self.q

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "q": self.q, "delta": self.delta, "beta": self.beta}


def shell_base(gamma: float) -> float:
    """``gamma^(1/k)`` with the smallest k making the ratio at least 1/2."""
    k = max(1, math.ceil(math.log(gamma) / math.log(0.5) - 1e-12))
    return gamma ** (1.0 / k)


@dataclass
class ScaleBitVector:
    bits: tuple[int, ...]
    params: ScaleParams
    W: tuple[float, ...]
    lambda2: float

    @property
    def K(self) -> int:
        return sum(self.bits[self.params.q:])

    @property
    def ones(self) -> int:
        return sum(self.bits)


def scale_bits(traj, X: SpaceTimePoint, params: ScaleParams, lambda2: float | None = None,
               n_s: int = 16, n_sigma: int = 16) -> ScaleBitVector:
    """Bits ``T_alpha`` for ``alpha = 1..beta``.

    ``lambda2`` defaults to the point's own Struwe energy over the union of
    all annuli; a run-level value may be passed instead.  Raises
    :class:`InvariantViolation` if ``K > (2q+1) lambda2 / delta``.
    """
    g, q, beta = params.gamma, params.q, params.beta
    if isinstance(traj, SimulatedTrajectory) and params.finest < 4 * traj.grid.h * (1 - 1e-12):
        raise UnresolvableScale(f"finest scale {params.finest:.3g} below 4h = {4 * traj.grid.h:.3g}")
    bits = [1] * min(q, beta)
    W: list[float] = [math.nan] * min(q, beta)
    own = 0.0
    if beta > q:
        outer, inner = g, params.finest
        shells = struwe_shells(traj, X, outer, inner, n_s, n_sigma, base=shell_base(g))
        radii = np.array([s[0] for s in shells])
        vals = np.array([s[2] for s in shells])
        own = float(sum(vals))
        for a in range(q + 1, beta + 1):
            r1, r2 = g ** (a - q), g ** (a + q)
            sel = (radii <= r1 * (1 + 1e-12)) & (radii > r2 * (1 + 1e-12))
            w = float(sum(vals[sel]))
            W.append(w)
            bits.append(1 if w > params.delta else 0)
    lam = own if lambda2 is None else lambda2
    bv = ScaleBitVector(tuple(bits), params, tuple(W), lam)
    if bv.K > (2 * q + 1) * lam / params.delta:
        raise InvariantViolation(f"K={bv.K} exceeds (2q+1)*Lambda2/delta={(2 * q + 1) * lam / params.delta}")
    return bv


@dataclass
class Decomposition:
    classes: dict[tuple[int, ...], list[int]]
    Q: int
    params: ScaleParams

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def decompose(points, bitvectors: list[ScaleBitVector], lambda2: float | None = None) -> Decomposition:
    """Group points by bit-vector and check the class-count and class-weight bounds."""
    if len(points) != len(bitvectors):
        raise ValueError("points and bit-vectors differ in length")
    if not bitvectors:
        return Decomposition({}, 0, None)
    params = bitvectors[0].params
    if any(b.params != params for b in bitvectors):
        raise ValueError("bit-vectors were computed with different parameters")
    lam = max(b.lambda2 for b in bitvectors) if lambda2 is None else lambda2
    Q = params.Q(lam)
    classes: dict[tuple[int, ...], list[int]] = {}
    for i, b in enumerate(bitvectors):
        classes.setdefault(b.bits, []).append(i)
    classes = dict(sorted(classes.items()))
    heavy = [k for k in classes if sum(k) > Q]
    if heavy:
        raise InvariantViolation(f"class {heavy[0]} has more than Q={Q} ones")
    if len(classes) > params.beta ** Q:
        raise InvariantViolation(f"{len(classes)} classes exceed beta^Q={params.beta ** Q}")
    return Decomposition(classes, Q, params)


def q_range(params: ScaleParams, lambda2: float) -> tuple[int, int]:
    """Q from the measured Lambda_2 and from twice that value."""
    return params.Q(lambda2), params.Q(2 * lambda2)


# --- strata membership ---------------------------------------------------------

def scale_ladder(r: float, R: float, gamma: float) -> list[float]:
    """``{R, R gamma, R gamma^2, ...}`` intersected with ``[r, R]``."""
    if not 0 < r <= R:
        raise ValueError("need 0 < r <= R")
    out, s = [], R
    while s >= r * (1 - 1e-12):
        out.append(s)
        s *= gamma
    return out


@dataclass
class StrataLabel:
    X: SpaceTimePoint
    j: int
    eta: float
    r: float
    member: bool | None
    ladder: list[float]
    distances: dict[float, float] = field(default_factory=dict)
    witness: dict | None = None

    @property
    def undetermined(self) -> bool:
        return self.member is None


class LabelEngine:
    """Caches windows and fits per (point, scale); static maps drop the time coordinate."""

    def __init__(self, traj, dictionary: Dictionary, spec: WindowSpec | None = None,
                 max_windows: int = 20000):
        self.traj = traj
        self.dictionary = dictionary
        self.spec = spec or WindowSpec(traj.m, 9, 9)
        self._fits: dict = {}
        self._windows: OrderedDict = OrderedDict()
        self.max_windows = max_windows

    def _key(self, X: SpaceTimePoint, s: float):
        return (X.x, None if self.traj.is_static else X.t, s)

    def window(self, X: SpaceTimePoint, s: float):
        key = self._key(X, s)
        if key not in self._windows:
            if len(self._windows) >= self.max_windows:
                self._windows.popitem(last=False)
            self._windows[key] = sample_window(self.traj, X, s, self.spec)
        return self._windows[key]

    def fit(self, X: SpaceTimePoint, s: float, j: int, stop_below: float | None = None):
        key = self._key(X, s) + (j, stop_below)
        if key not in self._fits:
            self._fits[key] = best_fit(self.window(X, s), j, self.dictionary, stop_below=stop_below)
        return self._fits[key]

    def membership(self, X: SpaceTimePoint, j: int, eta: float, r: float, R: float,
                   gamma: float) -> StrataLabel:
        ladder = scale_ladder(r, R, gamma)
        label = StrataLabel(X, j, eta, r, True, ladder)
        for s in sorted(ladder):
            try:
                bf = self.fit(X, s, j + 1, stop_below=eta)
            except EmptyDictionary:
                label.distances[s] = math.inf
                continue
            except (WindowRejected, TrajectoryRangeError) as exc:
                label.member = None
                label.witness = {"error": str(exc), "scale": s}
                return label
            label.distances[s] = bf.distance
            if bf.distance <= eta:
                label.member = False
                label.witness = {"scale": s, "distance": bf.distance, **bf.candidate.describe()}
                return label
        return label


def strata_membership(traj, X: SpaceTimePoint, j: int, eta: float, r: float, R: float,
                      dictionary: Dictionary, gamma: float = 0.25, spec: WindowSpec | None = None,
                      engine: LabelEngine | None = None) -> StrataLabel:
    """Is ``X`` in S^j_{eta,r}: far from every (j+1)-selfsimilar candidate at all ladder scales?"""
    engine = engine or LabelEngine(traj, dictionary, spec)
    return engine.membership(X, j, eta, r, R, gamma)


# --- regularity scale ------------------------------------------------------------

@dataclass
class RegularityRecord:
    X: SpaceTimePoint
    r_u: float
    binding: str


def _norms(f: dict) -> tuple[np.ndarray, np.ndarray]:
    g = np.sqrt(np.sum(f["grad"] ** 2, axis=(-2, -1)))
    H = np.sqrt(np.sum(f["hess"] ** 2, axis=(-3, -2, -1)))
    bad = ~f["valid"]
    g = np.where(bad, np.inf, g)
    H = np.where(bad, np.inf, H)
    return g, H


def scale_limit(g: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Largest ``r`` with ``r g + r^2 H <= 1`` pointwise (``inf`` where both vanish)."""
    g = np.asarray(g, dtype=float)
    H = np.asarray(H, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ell = 2.0 / (g + np.sqrt(g * g + 4.0 * H))
    ell = np.where((g == 0) & (H == 0), np.inf, ell)
    return np.where(np.isfinite(g) & np.isfinite(H), ell, 0.0)


class _Probe:
    """Gradient/Hessian norms on the probe nodes of ``P_r(X)``."""

    def __init__(self, traj, X: SpaceTimePoint, n_probe: int, n_probe_t: int, spatial_only: bool):
        self.traj, self.X = traj, X
        self.n_probe, self.n_probe_t = n_probe, n_probe_t
        self.spatial_only = spatial_only
        self.sim = isinstance(traj, SimulatedTrajectory)
        if self.sim:
            g = traj.grid
            centres = g.centers()
            disp = spatial_displacement(centres, np.array(X.x), g.period if g.periodic else None)
            self.dist = np.sqrt(np.einsum("ij,ij->i", disp, disp))
            self.order = np.argsort(self.dist, kind="stable")
            self._slices: dict = {}

    def _slice_norms(self, k: int):
        if k not in self._slices:
            tr = self.traj
            grad = tr._field("grad", k)
            hess = tr._field("hess", k)
            self._slices[k] = (np.sqrt(np.sum(grad * grad, axis=1)), np.sqrt(np.sum(hess * hess, axis=1)))
        return self._slices[k]

    def _sim_times(self, r: float):
        tr, t = self.traj, self.X.t
        if self.spatial_only:
            r2 = 0.0
        else:
            r2 = r * r
        ks = [int(k) for k in np.flatnonzero(np.abs(tr.times - t) < r2)]
        exact = [int(k) for k in np.flatnonzero(np.abs(tr.times - t) <= 1e-14)]
        return sorted(set(ks) | set(exact))

    def sup(self, r: float) -> tuple[float, float, float]:
        """Max of ``r g + r^2 H`` over the ball, with the g and H terms at the maximiser."""
        if self.sim:
            nodes = self.order[: int(np.searchsorted(self.dist[self.order], r, side="left"))]
            if len(nodes) == 0:
                return 0.0, 0.0, 0.0
            ks = self._sim_times(r)
            if not ks:
                tr = self.traj
                k = int(np.clip(np.searchsorted(tr.times, self.X.t, side="right") - 1, 0, len(tr.times) - 1))
                ks = [k]
            best = (-1.0, 0.0, 0.0)
            for k in ks:
                g, H = self._slice_norms(k)
                val = r * g[nodes] + r * r * H[nodes]
                i = int(np.argmax(val))
                if val[i] > best[0]:
                    best = (float(val[i]), float(r * g[nodes][i]), float(r * r * H[nodes][i]))
            return best
        m = self.traj.m
        ax = np.linspace(-r, r, 2 * self.n_probe + 1)
        mesh = np.meshgrid(*([ax] * m), indexing="ij")
        off = np.stack([a.ravel() for a in mesh], axis=-1)
        off = off[np.einsum("ij,ij->i", off, off) < r * r * (1 - 1e-12) + 1e-300]
        if self.traj.is_static or self.spatial_only:
            times = np.array([self.X.t])
        else:
            times = self.X.t + r * r * np.linspace(-1, 1, self.n_probe_t + 2)[1:-1]
        best = (-1.0, 0.0, 0.0)
        for t in times:
            x = np.array(self.X.x) + off
            f = self.traj.derivatives(x, np.full(len(x), t), hessian=True)
            g, H = _norms(f)
            val = r * g + r * r * H
            i = int(np.argmax(val))
            if val[i] > best[0]:
                best = (float(val[i]), float(r * g[i]), float(r * r * H[i]))
        return best


def _bisect_scale(probe: _Probe, r_min: float, r_max: float, tol: float) -> tuple[float, str]:
    val, gt, ht = probe.sup(r_max)
    if val <= 1.0:
        return r_max, "cap"
    lo, hi = r_min, r_max
    val_lo, glo, hlo = probe.sup(lo)
    if val_lo > 1.0:
        return lo, "gradient" if glo >= hlo else "hessian"
    hi_terms = (gt, ht)
    while hi / lo > 1.0 + tol:
        mid = math.sqrt(lo * hi)
        val, gm, hm = probe.sup(mid)
        if val <= 1.0:
            lo = mid
        else:
            hi, hi_terms = mid, (gm, hm)
    return lo, "gradient" if hi_terms[0] >= hi_terms[1] else "hessian"


def regularity_scale(traj, X: SpaceTimePoint, R_max: float, r_min: float | None = None,
                     tol: float = 0.02, n_probe: int = 16, n_probe_t: int = 9) -> RegularityRecord:
    """``sup{r : sup_{P_r(X)} r|grad u| + r^2|hess u| <= 1}`` by bisection, capped to ``[r_min, R_max]``."""
    if r_min is None:
        r_min = 4 * traj.grid.h if isinstance(traj, SimulatedTrajectory) else R_max * 1e-6
    r_min = min(r_min, R_max)
    probe = _Probe(traj, X, n_probe, n_probe_t, spatial_only=False)
    r, binding = _bisect_scale(probe, r_min, R_max, tol)
    return RegularityRecord(X, r, binding)


def static_reg_scale(snapshot, x, R_max: float = 1.0, tol: float = 0.02) -> float:
    """Spatial regularity scale of one snapshot at ``x``, capped at ``min(1, R_max)``."""
    traj = SimulatedTrajectory([snapshot], dt=0.0)
    X = SpaceTimePoint(tuple(np.atleast_1d(x)), snapshot.t)
    probe = _Probe(traj, X, 0, 0, spatial_only=True)
    cap = min(1.0, R_max)
    r, _ = _bisect_scale(probe, min(snapshot.grid.h, cap), cap, tol)
    return r


def bad_set(traj, r: float, cloud, R_max: float | None = None, records=None, **kw) -> list[int]:
    """Indices of cloud points with ``r_u <= r``."""
    if records is None:
        R_max = R_max if R_max is not None else max(4 * r, 1.0)
        records = [regularity_scale(traj, X, R_max, **kw) for X in cloud]
    return [i for i, rec in enumerate(records) if rec.r_u <= r]


# --- field evaluation ------------------------------------------------------------

def regularity_field(ell: np.ndarray, h: float, R_max: float, r_min: float, ht: float | None = None,
                     ratio: float = 1.02) -> np.ndarray:
    """``r_u`` on a node grid from the pointwise limit ``ell``.

    ``ell`` has shape ``(n_t,) + spatial`` (use ``n_t = 1`` for static data).
    ``r_u(X)`` is the smallest ladder radius ``r`` such that X is within
    parabolic distance ``r`` of a node with ``ell <= r``; nodes never reached
    get ``R_max``.  The ladder ratio bounds the relative error.
    """
    ell = np.asarray(ell, dtype=float)
    out = np.full(ell.shape, R_max)
    done = np.zeros(ell.shape, dtype=bool)
    n_steps = max(1, int(math.ceil(math.log(R_max / r_min) / math.log(ratio))))
    ladder = r_min * ratio ** np.arange(n_steps + 1)
    ladder[-1] = R_max
    spatial_shape = ell.shape[1:]
    for r in ladder:
        seeds = ell <= r
        if not seeds.any():
            continue
        idx = np.argwhere(seeds)
        pad = int(math.ceil(r / h)) + 1
        lo = np.maximum(idx[:, 1:].min(axis=0) - pad, 0)
        hi = np.minimum(idx[:, 1:].max(axis=0) + pad + 1, spatial_shape)
        box = (slice(None),) + tuple(slice(a, b) for a, b in zip(lo, hi))
        sub = seeds[box]
        reach = np.zeros(sub.shape, dtype=bool)
        for k in range(sub.shape[0]):
            if sub[k].any():
                reach[k] = ndimage.distance_transform_edt(~sub[k], sampling=h) < r
        if ell.shape[0] > 1 and ht:
            span = int(math.floor((r * r) / ht - 1e-12))
            if span > 0:
                reach = ndimage.maximum_filter1d(reach.astype(np.uint8), size=2 * span + 1, axis=0,
                                                 mode="constant").astype(bool)
        region = done[box]
        fresh = reach & ~region
        out_box = out[box]
        out_box[fresh] = r
        out[box] = out_box
        done[box] = region | reach
        if done.all():
            break
    return out


@dataclass
class LpReport:
    p: float
    value: float
    cap_fraction: float
    h: float
    cells: int


def lp_reciprocal_integral(traj, p, R_max: float, grid: GridSpec | None = None,
                           time_range: tuple[float, float] | None = None, n_t: int = 1,
                           ratio: float = 1.04):
    """``sum r_u^-p`` times the space-time cell volume, with ``r_u`` floored at ``4h``.

    ``p`` may be a sequence, in which case one report per exponent is returned
    from a single evaluation of the regularity field.
    """
    ps = [float(v) for v in np.atleast_1d(p)]
    if min(ps) <= 0:
        raise ValueError("p must be positive")
    if grid is None:
        if not isinstance(traj, SimulatedTrajectory):
            raise ValueError("analytic trajectories need an explicit sampling grid")
        grid = traj.grid
    h = grid.h
    if isinstance(traj, SimulatedTrajectory):
        lo, hi = time_range or traj.t_range
        ks = [k for k in range(len(traj.times)) if lo - 1e-12 <= traj.times[k] <= hi + 1e-12]
        ells = []
        for k in ks:
            grad, hess = traj._field("grad", k), traj._field("hess", k)
            ells.append(scale_limit(np.sqrt(np.sum(grad ** 2, axis=1)),
                                    np.sqrt(np.sum(hess ** 2, axis=1))).reshape(grid.shape))
        ell = np.stack(ells)
        t_len = hi - lo if len(ks) > 1 else 1.0
        ht = (hi - lo) / max(1, len(ks) - 1) if len(ks) > 1 else None
    else:
        lo, hi = time_range or (0.0, 1.0)
        if traj.is_static:
            times = np.array([lo])
        else:
            times = lo + (np.arange(n_t) + 0.5) * (hi - lo) / n_t
        x = grid.centers()
        ells = []
        for t in times:
            f = traj.derivatives(x, np.full(len(x), t), hessian=True)
            g, H = _norms(f)
            ells.append(scale_limit(g, H).reshape(grid.shape))
        ell = np.stack(ells)
        t_len = hi - lo
        ht = None if traj.is_static else (hi - lo) / n_t
    floor = 4 * h
    ru = regularity_field(ell, h, R_max, floor, ht, ratio)
    capped = ru <= floor * (1 + 1e-12)
    ru = np.maximum(ru, floor)
    per_slice = t_len / ell.shape[0]
    reports = [LpReport(q, float(np.sum(ru ** (-q)) * grid.cell_volume * per_slice), float(capped.mean()),
                        h, int(ru.size)) for q in ps]
    return reports if np.ndim(p) else reports[0]


# --- persistence -----------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_labels_csv(labels: list[StrataLabel], path, indices=None) -> None:
    """One row per label; ``indices`` gives the point index of each row (default: row number)."""
    m = labels[0].X.m if labels else 0
    indices = range(len(labels)) if indices is None else indices
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"x{i}" for i in range(m)] + ["t", "j", "eta", "r", "member",
                                                               "witness_scale", "witness_distance", "witness_kind"])
        for i, lab in zip(indices, labels):
            wit = lab.witness or {}
            member = "undetermined" if lab.member is None else int(lab.member)
            w.writerow([i, *map(repr, lab.X.x), repr(lab.X.t), lab.j, repr(lab.eta), repr(lab.r), member,
                        _fmt(wit.get("scale")), _fmt(wit.get("distance")), wit.get("kind", "")])


def write_regularity_csv(records: list[RegularityRecord], path) -> None:
    m = records[0].X.m if records else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"x{i}" for i in range(m)] + ["t", "r_u", "binding"])
        for i, rec in enumerate(records):
            w.writerow([i, *map(repr, rec.X.x), repr(rec.X.t), repr(rec.r_u), rec.binding])
