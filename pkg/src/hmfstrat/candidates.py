"""Dictionary of self-similar comparison maps and best-fit search.

Families, all anchored at the window centre:

* ``constant``: static with every spatial symmetry, ``D = m + 2``.
* ``cone``: static split cone ``Q (Px / |Px|)`` with a k x m projection ``P``
  (k = 2, 3), invariant along ``ker P``; ``D = m - k + 2``.
* ``quasistatic``: a cone up to time ``T`` and a constant afterwards; ``D = m - k``.
* ``shrinking``: ``Q psi(Px / sqrt(-t))`` with an equivariant profile ``psi``
  into S^k; ``D = m - k``.

For a fixed plane the optimal target rotation has a closed form: the fit
reduces to maximising ``tr(Q^T M)`` over O(n+1), which is the nuclear norm
of ``M``.  Planes are searched over a quasi-random Grassmannian sample
followed by Givens-rotation coordinate descent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc

from .geometry import SpaceTimePoint
from .profiles import (ShrinkProfile, ShootingError, bisect_shooting, divergence_sign, find_bracket,
                       first_shrinker, shrink_profile_solve)
from .solver import (ConstantTrajectory, QuasistaticTrajectory, ShrinkingTrajectory,
                     SplitConeTrajectory)
from .windows import Window, WindowSpec, sample_window, window_nodes

__all__ = ["InvariancePlane", "Candidate", "Dictionary", "BestFit", "best_fit", "symmetry_count",
           "structure_tensor", "shrink_profile_solve", "bisect_shooting", "find_bracket",
           "first_shrinker", "divergence_sign", "ShrinkProfile", "ShootingError", "EmptyDictionary"]

AXIS_EPS = 1e-12


class EmptyDictionary(ValueError):
    pass


def complement(P: np.ndarray, m: int) -> np.ndarray:
    """Orthonormal basis (rows) of the orthogonal complement of the row space of ``P``."""
    P = np.atleast_2d(P) if np.size(P) else np.zeros((0, m))
    if P.shape[0] == 0:
        return np.eye(m)
    _, s, vt = np.linalg.svd(P, full_matrices=True)
    rank = int(np.sum(s > 1e-10))
    return vt[rank:].copy()


@dataclass
class InvariancePlane:
    """Spatial plane ``x + V`` together with a time extent.

    ``time_kind`` is ``slice`` ({t}), ``halfline`` ((-inf, T]) or ``line`` (all of R).
    """

    V: np.ndarray
    anchor: SpaceTimePoint
    time_kind: str
    T: float | None = None

    def __post_init__(self):
        m = self.anchor.m
        self.V = np.asarray(self.V, dtype=float).reshape(-1, m)
        if self.time_kind not in ("slice", "halfline", "line"):
            raise ValueError(f"unknown time extent {self.time_kind!r}")
        if self.time_kind == "halfline" and self.T is None:
            raise ValueError("half-line planes need an end time T")

    @property
    def d(self) -> int:
        return self.V.shape[0]

    def contains_direction(self, y, tol: float = 1e-9) -> bool:
        y = np.asarray(y, dtype=float)
        if self.d == 0:
            return bool(np.linalg.norm(y) <= tol)
        resid = y - self.V.T @ (self.V @ y)
        return bool(np.linalg.norm(resid) <= tol * max(1.0, np.linalg.norm(y)))

    def distance(self, Y: SpaceTimePoint) -> float:
        """Parabolic distance from ``Y`` to the plane."""
        y = np.array(Y.x) - np.array(self.anchor.x)
        spatial = float(np.linalg.norm(y - self.V.T @ (self.V @ y))) if self.d else float(np.linalg.norm(y))
        if self.time_kind == "line":
            gap = 0.0
        elif self.time_kind == "slice":
            gap = abs(Y.t - self.anchor.t)
        else:
            gap = max(0.0, Y.t - self.T)
        return max(spatial, math.sqrt(gap))


@dataclass
class Candidate:
    kind: str
    m: int
    n: int
    P: np.ndarray
    Q: np.ndarray
    T: float | None = None
    p: np.ndarray | None = None
    profile: ShrinkProfile | None = None
    anchor: SpaceTimePoint | None = None
    scale: float = 1.0

    @property
    def k(self) -> int:
        return self.P.shape[0]

    @property
    def V(self) -> np.ndarray:
        return complement(self.P, self.m)

    @property
    def static(self) -> bool:
        return self.kind in ("constant", "cone")

    def plane(self) -> InvariancePlane:
        anchor = self.anchor or SpaceTimePoint((0.0,) * self.m, 0.0)
        kind = {"constant": "line", "cone": "line", "quasistatic": "halfline", "shrinking": "slice"}[self.kind]
        T = None if self.T is None else anchor.t + self.scale ** 2 * self.T
        return InvariancePlane(self.V, anchor, kind, T)

    def trajectory(self):
        """Exact map in window coordinates (anchor at the origin, unit scale)."""
        if self.kind == "constant":
            return ConstantTrajectory(self.m, self.Q @ self.p)
        cone = None
        if self.kind in ("cone", "quasistatic"):
            cone = SplitConeTrajectory(self.m, self.n, self.P, self.Q)
        if self.kind == "cone":
            return cone
        if self.kind == "quasistatic":
            return QuasistaticTrajectory(cone, self.T, self.p)
        return ShrinkingTrajectory(self.m, self.n, self.profile, self.P, self.Q)

    def evaluate_window(self, spec: WindowSpec) -> Window:
        origin = SpaceTimePoint((0.0,) * self.m, 0.0)
        return sample_window(self.trajectory(), origin, 1.0, spec, max_masked=1.0)

    def rotated(self, R) -> "Candidate":
        R = np.asarray(R, dtype=float)
        out = Candidate(**{**self.__dict__})
        out.Q = R @ self.Q
        if self.kind == "quasistatic" and self.p is not None:
            out.p = R @ self.p
        return out

    def describe(self) -> dict:
        return {"kind": self.kind, "k": self.k, "D": symmetry_count(self),
                "T": self.T, "profile_a": None if self.profile is None else self.profile.a}


def symmetry_count(c: Candidate) -> int:
    """``dim V`` plus 2 for static candidates."""
    return c.V.shape[0] + (2 if c.static else 0)


# --- window preprocessing ----------------------------------------------------

@dataclass
class _WinData:
    x: np.ndarray        # (N, m) spatial nodes with at least one usable sample
    tn: np.ndarray       # (n_t,)
    a: np.ndarray        # (N, n_t, dim)
    U: np.ndarray        # (N, n_t) bool
    vol: float

    @classmethod
    def from_window(cls, win: Window) -> "_WinData":
        _, tn, xn, _ = window_nodes(win.spec)
        U = win.usable
        rows = U.any(axis=1)
        a = win.values[rows] * U[rows][..., None]
        return cls(xn[rows], tn, a, U[rows], win.spec.volume)

    @property
    def count(self) -> int:
        return int(self.U.sum())


def _procrustes(M: np.ndarray) -> tuple[float, np.ndarray]:
    """Max of ``tr(Q^T M_pad)`` over orthogonal Q and the maximiser (square, dim x dim)."""
    dim = M.shape[0]
    pad = np.zeros((dim, dim))
    pad[:, : M.shape[1]] = M
    W, s, Zt = np.linalg.svd(pad)
    return float(np.sum(s)), W @ Zt


def _cone_dirs(x: np.ndarray, P: np.ndarray):
    z = x @ P.T
    r = np.linalg.norm(z, axis=1)
    ok = r > AXIS_EPS
    e = np.zeros_like(z)
    e[ok] = z[ok] / r[ok, None]
    return e, ok


@dataclass
class _Fit:
    dist: float
    P: np.ndarray
    Q: np.ndarray
    T: float | None = None
    p: np.ndarray | None = None


def _fit_constant(d: _WinData) -> _Fit:
    S = d.a.sum(axis=(0, 1))
    N = d.count
    mag = float(np.linalg.norm(S))
    p = S / mag if mag > 0 else np.eye(d.a.shape[-1])[-1]
    dim = d.a.shape[-1]
    return _Fit(d.vol * (2.0 - 2.0 * mag / N), np.zeros((0, d.x.shape[1])), np.eye(dim), p=p)


def _fit_cone(d: _WinData, P: np.ndarray) -> _Fit:
    e, ok = _cone_dirs(d.x, P)
    A = d.a[ok].sum(axis=1)
    N = int(d.U[ok].sum())
    if N == 0:
        return _Fit(math.inf, P, np.eye(d.a.shape[-1]))
    nuc, Q = _procrustes(A.T @ e[ok])
    return _Fit(d.vol * (2.0 - 2.0 * nuc / N), P, Q)


def _fit_quasistatic(d: _WinData, P: np.ndarray, T_grid: np.ndarray) -> _Fit:
    e, ok = _cone_dirs(d.x, P)
    per_slice = np.einsum("nja,nk->jak", d.a[ok], e[ok])
    cone_cnt = d.U[ok].sum(axis=0)
    all_sum = d.a.sum(axis=0)
    all_cnt = d.U.sum(axis=0)
    best = _Fit(math.inf, P, np.eye(d.a.shape[-1]))
    for T in T_grid:
        before = d.tn <= T + 1e-12
        N = int(cone_cnt[before].sum() + all_cnt[~before].sum())
        if N == 0:
            continue
        nuc, Q = _procrustes(per_slice[before].sum(axis=0)) if before.any() else (0.0, np.eye(d.a.shape[-1]))
        S = all_sum[~before].sum(axis=0)
        mag = float(np.linalg.norm(S))
        dist = d.vol * (2.0 - 2.0 * (nuc + mag) / N)
        if dist < best.dist - 1e-12:
            p = S / mag if mag > 0 else np.eye(d.a.shape[-1])[-1]
            best = _Fit(dist, P, Q, float(T), p)
    return best


def _psi_values(profile: ShrinkProfile, z: np.ndarray) -> np.ndarray:
    rho = np.linalg.norm(z, axis=-1)
    safe = np.where(rho > 0, rho, 1.0)
    h = profile.value(rho)
    return np.concatenate([(np.sin(h) / safe)[..., None] * z, np.cos(h)[..., None]], axis=-1)


def _fit_shrinking(d: _WinData, P: np.ndarray, profile: ShrinkProfile) -> _Fit:
    back = d.tn < 0
    if not back.any():
        return _Fit(math.inf, P, np.eye(d.a.shape[-1]))
    s = np.sqrt(-d.tn[back])
    z = (d.x @ P.T)[:, None, :] / s[None, :, None]
    psi = _psi_values(profile, z)
    U = d.U[:, back]
    N = int(U.sum())
    if N == 0:
        return _Fit(math.inf, P, np.eye(d.a.shape[-1]))
    M = np.einsum("nja,njb->ab", d.a[:, back], psi * U[..., None])
    nuc, Q = _procrustes(M)
    return _Fit(d.vol * (2.0 - 2.0 * nuc / N), P, Q)


# --- plane search ------------------------------------------------------------

def grassmann_samples(k: int, m: int, count: int, seed: int = 0) -> list[np.ndarray]:
    """Coordinate k-planes followed by ``count`` quasi-random planes (rows orthonormal)."""
    if k >= m:
        return [np.eye(m)]
    planes = [np.eye(m)[list(c)] for c in itertools.combinations(range(m), k)]
    if count > 0:
        sob = qmc.Sobol(d=k * m, scramble=True, seed=seed)
        u = sob.random_base2(max(1, math.ceil(math.log2(count))))[:count]
        g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12)).reshape(count, k, m)
        for G in g:
            q, _ = np.linalg.qr(G.T)
            planes.append(q.T.copy())
    return planes


def _givens(m: int, i: int, j: int, theta: float) -> np.ndarray:
    G = np.eye(m)
    c, s = math.cos(theta), math.sin(theta)
    G[i, i] = G[j, j] = c
    G[i, j], G[j, i] = -s, s
    return G


def _refine(fit_fn, start: _Fit, m: int, rounds: int, step: float) -> tuple[_Fit, int]:
    best, evals = start, 0
    if start.P.shape[0] in (0, m):
        return best, evals
    for r in range(rounds):
        theta = step / 2 ** r
        improved = True
        while improved:
            improved = False
            for i, j in itertools.combinations(range(m), 2):
                for sgn in (1.0, -1.0):
                    cand = fit_fn(best.P @ _givens(m, i, j, sgn * theta))
                    evals += 1
                    if cand.dist < best.dist - 1e-12:
                        best, improved = cand, True
    return best, evals


@dataclass
class Family:
    kind: str
    k: int
    D: int
    profile: ShrinkProfile | None = None


@dataclass
class Dictionary:
    """Candidate families for maps R^m x R -> S^n."""

    m: int
    n: int
    n_planes: int = 64
    refine_rounds: int = 3
    refine_step: float = 0.2
    seed: int = 0
    T_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 17))
    cone_ks: tuple[int, ...] = (2, 3)
    shrink_ks: tuple[int, ...] = (3, 4, 5, 6)
    families: list[Family] = field(default_factory=list)

    def __post_init__(self):
        self.T_grid = np.asarray(self.T_grid, dtype=float)
        if not self.families:
            m, n = self.m, self.n
            fams = [Family("constant", 0, m + 2)]
            ks = [k for k in self.cone_ks if 2 <= k <= min(m, n + 1)]
            fams += [Family("cone", k, m - k + 2) for k in ks]
            fams += [Family("quasistatic", k, m - k) for k in ks]
            for k in self.shrink_ks:
                if 3 <= k <= min(m, n, 6):
                    try:
                        fams.append(Family("shrinking", k, m - k, first_shrinker(k)))
                    except ShootingError:
                        pass
            self.families = fams
        self._planes: dict[int, list[np.ndarray]] = {}

    def planes(self, k: int) -> list[np.ndarray]:
        if k not in self._planes:
            self._planes[k] = grassmann_samples(k, self.m, self.n_planes, self.seed + 7919 * k)
        return self._planes[k]

    def config(self) -> dict:
        return {"m": self.m, "n": self.n, "n_planes": self.n_planes, "refine_rounds": self.refine_rounds,
                "refine_step": self.refine_step, "seed": self.seed, "T_grid": self.T_grid.tolist(),
                "families": [{"kind": f.kind, "k": f.k, "D": f.D,
                              "profile_a": None if f.profile is None else f.profile.a} for f in self.families]}


@dataclass
class BestFit:
    distance: float
    candidate: Candidate | None
    plane: InvariancePlane | None
    family: int
    evaluations: int = 0


def _fit_family(d: _WinData, fam: Family, dic: Dictionary):
    if fam.kind == "constant":
        return _fit_constant(d), 1
    if fam.kind == "cone":
        fn = lambda P: _fit_cone(d, P)
    elif fam.kind == "quasistatic":
        fn = lambda P: _fit_quasistatic(d, P, dic.T_grid)
    else:
        fn = lambda P: _fit_shrinking(d, P, fam.profile)
    best, evals = None, 0
    for P in dic.planes(fam.k):
        f = fn(P)
        evals += 1
        if best is None or f.dist < best.dist - 1e-12:
            best = f
    best, more = _refine(fn, best, dic.m, dic.refine_rounds, dic.refine_step)
    return best, evals + more


def best_fit(window: Window, j: int, dictionary: Dictionary, stop_below: float | None = None) -> BestFit:
    """Smallest distance from ``window`` to a dictionary element with ``D >= j``.

    The result bounds the true infimum over all j-selfsimilar maps from
    above.  With ``stop_below`` the search ends at the first family whose
    fit falls below it.
    """
    fams = [(i, f) for i, f in enumerate(dictionary.families) if f.D >= j]
    if not fams:
        raise EmptyDictionary(f"no candidate with D >= {j} for m={dictionary.m}, n={dictionary.n}")
    d = _WinData.from_window(window)
    if d.count == 0:
        raise ValueError("window has no usable samples")
    best, best_i, best_fam, evals = None, -1, None, 0
    for i, fam in fams:
        f, e = _fit_family(d, fam, dictionary)
        evals += e
        if best is None or f.dist < best.dist - 1e-12:
            best, best_i, best_fam = f, i, fam
        if stop_below is not None and best.dist <= stop_below:
            break
    cand = Candidate(best_fam.kind, dictionary.m, dictionary.n, best.P, best.Q, best.T, best.p,
                     best_fam.profile, window.base, window.scale)
    if best_fam.kind == "constant":
        cand.p, cand.Q = best.p, np.eye(dictionary.n + 1)
    return BestFit(max(best.dist, 0.0), cand, cand.plane(), best_i, evals)


# --- symmetry estimator --------------------------------------------------------

@dataclass
class StructureTensor:
    Q: np.ndarray
    tau: float
    eigenvalues: np.ndarray
    d_hat: int
    static: bool

    @property
    def D_hat(self) -> int:
        return self.d_hat + (2 if self.static else 0)


def structure_tensor(window: Window, tol_sym: float = 1e-6) -> StructureTensor:
    """``Q_ij = int d_i u . d_j u`` and ``tau = int |d_t u|^2`` by central differences on the window grid.

    Eigenvalues and ``tau`` are compared with ``tol_sym`` after division by Vol(P_1).
    """
    spec = window.spec
    m, w, w_t = spec.m, spec.w, spec.w_t
    shape = (w,) * m + (w_t,)
    vals = window.values.reshape(shape + (-1,))
    use = window.usable.reshape(shape)
    grads, ok = [], use.copy()
    for ax in range(m + 1):
        if shape[ax] < 3:
            grads.append(np.zeros_like(vals))
            continue
        hh = spec.h if ax < m else spec.h_t
        g = np.zeros_like(vals)
        g_ok = np.zeros_like(use)
        sl_c = [slice(None)] * (m + 1)
        sl_p = [slice(None)] * (m + 1)
        sl_m = [slice(None)] * (m + 1)
        sl_c[ax], sl_p[ax], sl_m[ax] = slice(1, -1), slice(2, None), slice(None, -2)
        g[tuple(sl_c)] = (vals[tuple(sl_p)] - vals[tuple(sl_m)]) / (2 * hh)
        g_ok[tuple(sl_c)] = use[tuple(sl_p)] & use[tuple(sl_m)]
        grads.append(g)
        if ax < m:
            ok &= g_ok
        elif not window.static:
            ok &= g_ok
    cnt = int(ok.sum())
    if cnt == 0:
        raise ValueError("window too small for finite differences")
    G = np.stack([g[ok] for g in grads[:m]], axis=1)
    vol = spec.volume
    Qm = vol * np.einsum("nia,nja->ij", G, G) / cnt
    tau = 0.0 if window.static else vol * float(np.sum(grads[m][ok] ** 2)) / cnt
    ev = np.linalg.eigvalsh(Qm)
    d_hat = int(np.sum(ev / vol < tol_sym))
    return StructureTensor(Qm, tau, ev, d_hat, tau / vol < tol_sym)
