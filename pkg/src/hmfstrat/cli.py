"""Command line pipeline: simulate, analyze (label), verify (cover, fit, cone-split), report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .candidates import Dictionary
from .config import ConfigError, RunConfig, load_config
from .energies import EnergyReport, dirichlet_scale_invariant, time_derivative_energy, write_energy_csv
from .geometry import GridSpec, SpaceTimePoint, tubular_volume
from .plotting import plot_slope_fits
from .solver import (ShrinkingTrajectory, TrajectoryRangeError, UnsupportedAnalytic, load_trajectory, make_analytic,
                     run, save_trajectory, smooth_random_data)
from .strata import (InvariantViolation, LabelEngine, ScaleParams, UnresolvableScale, decompose, q_range,
                     regularity_scale, scale_bits, write_labels_csv, write_regularity_csv)
from .target import ProjectionBreakdown
from .windows import WindowSpec

log = logging.getLogger("hmfstrat")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _num(v):
    return repr(float(v)) if v is not None else ""


# --- simulate ------------------------------------------------------------------

def build_trajectory(cfg: RunConfig):
    tc = cfg.trajectory
    if tc.source == "analytic":
        try:
            return make_analytic(tc.kind, cfg.m, cfg.n, **tc.params)
        except (UnsupportedAnalytic, TypeError) as exc:
            raise ConfigError(f"trajectory: {exc}") from None
    grid = GridSpec(cfg.m, tc.n_cells, tc.length / tc.n_cells)
    u0 = smooth_random_data(grid, cfg.n, tc.modes, tc.amplitude, cfg.seed)
    return run(u0, tc.t_end, tc.record_every, sigma=tc.sigma)


def cmd_simulate(cfg: RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    traj = build_trajectory(cfg)
    save_trajectory(traj, out / "trajectory", extra={"config": cfg.to_dict()})
    return traj


# --- analyze -------------------------------------------------------------------

def make_cloud(cfg: RunConfig, traj) -> list[SpaceTimePoint]:
    c = cfg.cloud
    m = cfg.m
    center = np.zeros(m) if c.center is None else np.asarray(c.center, dtype=float)
    if c.kind == "lattice":
        ax = -c.extent + (np.arange(c.count) + 0.5) * (2 * c.extent / c.count)
        mesh = np.meshgrid(*([ax] * m), indexing="ij")
        xs = center + np.stack([g.ravel() for g in mesh], axis=-1)
    elif c.kind == "random":
        rng = np.random.default_rng(cfg.seed)
        xs = center + rng.uniform(-c.extent, c.extent, size=(c.count, m))
    else:
        z = np.linspace(-c.extent, c.extent, c.count)
        xs = center + np.outer(z, np.eye(m)[-1])
    return [SpaceTimePoint(tuple(x), t) for t in c.times for x in xs]


def _dictionary(cfg: RunConfig) -> Dictionary:
    d = cfg.dictionary
    return Dictionary(cfg.m, cfg.n, d.n_planes, d.refine_rounds, d.refine_step, cfg.seed,
                      np.linspace(0.0, 1.0, d.T_steps), tuple(d.cone_ks), tuple(d.shrink_ks))


def _analyze_point(args):
    cfg, traj, dic, params, X = args
    st, ec, rc = cfg.strata, cfg.energies, cfg.regularity
    bv = scale_bits(traj, X, params, n_s=cfg.scale.n_s, n_sigma=cfg.scale.n_sigma)
    energies = [dirichlet_scale_invariant(traj, X, ec.radius, ec.n_space, ec.n_time),
                time_derivative_energy(traj, X, ec.radius, ec.n_space, ec.n_time)]
    struwe = EnergyReport("struwe_ladder", X, params.gamma, float(np.nansum(bv.W)), 0,
                          r2=params.finest)
    energies.append(struwe)
    spec = WindowSpec(cfg.m, st.window_w, st.window_wt, backward_only=isinstance(traj, ShrinkingTrajectory))
    engine = LabelEngine(traj, dic, spec)
    labels = [engine.membership(X, j, st.eta, r, st.R, params.gamma) for j in st.j for r in st.radii]
    reg = regularity_scale(traj, X, rc.R_max, rc.r_min, rc.tol)
    return bv, energies, labels, reg


def cmd_analyze(cfg: RunConfig, out: Path, threads: int = 1, traj=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    traj = traj if traj is not None else load_trajectory(out / "trajectory")
    sc = cfg.scale
    params = ScaleParams(sc.gamma, sc.q, sc.delta, sc.beta)
    dic = _dictionary(cfg)
    cloud = make_cloud(cfg, traj)
    jobs = [(cfg, traj, dic, params, X) for X in cloud]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(_analyze_point, jobs))
    bvs = [r[0] for r in results]
    energies = [e for r in results for e in r[1]]
    labels, label_idx = [], []
    for i, r in enumerate(results):
        labels.extend(r[2])
        label_idx.extend([i] * len(r[2]))
    regs = [r[3] for r in results]
    write_energy_csv(energies, out / "energies.csv")
    write_labels_csv(labels, out / "labels.csv", label_idx)
    write_regularity_csv(regs, out / "regularity.csv")
    with (out / "bits.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"x{i}" for i in range(cfg.m)] + ["t", "lambda2", "K", "bits", "W"])
        for i, (X, bv) in enumerate(zip(cloud, bvs)):
            w.writerow([i, *map(repr, X.x), repr(X.t), repr(bv.lambda2), bv.K, "".join(map(str, bv.bits)),
                        " ".join(repr(v) for v in bv.W)])
    lam = max((b.lambda2 for b in bvs), default=0.0)
    dec = decompose(cloud, bvs) if bvs else None
    info = {"config": cfg.to_dict(), "scale": params.to_dict(), "eta": cfg.strata.eta,
            "dictionary": dic.config(), "lambda2_measured": lam,
            "Q_range": list(q_range(params, lam)), "points": len(cloud),
            "classes": 0 if dec is None else dec.n_classes,
            "undetermined": sum(1 for lab in labels if lab.member is None)}
    _dump(info, out / "analyze.json")
    return info


# --- verify -------------------------------------------------------------------

def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _point(row: dict, m: int) -> np.ndarray:
    return np.array([float(row[f"x{i}"]) for i in range(m)] + [float(row["t"])])


def _check_monotone(labels: list[dict]) -> list[str]:
    """Members at a radius stay members at larger radii and at larger j."""
    state = {}
    for row in labels:
        if row["member"] != "undetermined":
            state[(int(row["index"]), int(row["j"]), float(row["r"]))] = row["member"] == "1"
    issues = []
    for (i, j, r), mem in state.items():
        if not mem:
            continue
        for (i2, j2, r2), mem2 in state.items():
            if i2 == i and not mem2 and ((j2 == j and r2 >= r) or (r2 == r and j2 >= j)):
                issues.append(f"point {i}: member of S^{j} at r={r} but not S^{j2} at r={r2}")
    return issues


def cmd_verify(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    out.mkdir(parents=True, exist_ok=True)
    m = cfg.m
    labels = _read_csv(out / "labels.csv")
    bits_rows = _read_csv(out / "bits.csv")
    sc = cfg.scale
    params = ScaleParams(sc.gamma, sc.q, sc.delta, sc.beta)
    report: dict = {"empty": not labels, "invariants": {}, "exponents": [], "cover": {}, "cone_split": []}
    if not labels:
        _dump(report, out / "verify.json")
        _write_summary(out, report)
        return EXIT_OK
    failures: list[str] = []

    bits = np.array([[int(c) for c in row["bits"]] for row in bits_rows], dtype=int)
    lam_pts = np.array([float(row["lambda2"]) for row in bits_rows])
    K = np.array([int(row["K"]) for row in bits_rows])
    bound = (2 * sc.q + 1) * lam_pts / sc.delta
    k_ok = bool(np.all(K <= bound))
    lam = float(lam_pts.max())
    Q = params.Q(lam)
    n_classes = len({row["bits"] for row in bits_rows})
    c_ok = n_classes <= params.beta ** Q
    mono = _check_monotone(labels)
    report["invariants"] = {"K_bound": k_ok, "class_count": n_classes, "class_bound": params.beta ** Q,
                            "class_ok": c_ok, "monotone_ok": not mono, "monotone_issues": mono[:10],
                            "lambda2": lam, "Q_range": list(q_range(params, lam))}
    if not k_ok:
        failures.append("K exceeds (2q+1) Lambda2 / delta")
    if not c_ok:
        failures.append("too many bit classes")
    failures.extend(mono)

    points = {int(r["index"]): _point(r, m) for r in bits_rows}
    radii = sorted({float(r["r"]) for r in labels})
    js = sorted({int(r["j"]) for r in labels})
    fits = {}
    for j in js:
        members = {rad: np.array([points[int(r["index"])] for r in labels
                                  if int(r["j"]) == j and float(r["r"]) == rad and r["member"] == "1"])
                   .reshape(-1, m + 1) for rad in radii}
        row = {"j": j, "predicted_slope": m + 2 - j, "slope": None, "dimension": None,
               "members": {repr(k): len(v) for k, v in members.items()}, "pass": None}
        if cfg.verify.minkowski and len(radii) >= 4 and all(len(v) for v in members.values()):
            tmin = min(p[-1] for p in points.values())
            tmax = max(p[-1] for p in points.values())
            vols = []
            allx = np.array([p[:-1] for p in points.values()])
            for rad in radii:
                h = rad / 4
                lo = float(allx.min()) - rad - h
                n_cells = int(math.ceil((float(allx.max()) + rad + h - lo) / h))
                grid = GridSpec(m, n_cells, h, periodic=False, origin=lo)
                vols.append(tubular_volume(members[rad], rad, grid, (tmin - rad * rad, tmax + rad * rad)))
            fit = analysis.fit_power_law(radii, vols, m)
            fits[f"j={j}"] = fit
            row.update(slope=fit.slope, dimension=fit.dimension, residual=fit.residual,
                       volumes=[float(v) for v in vols],
                       **{"pass": fit.slope >= m + 2 - j - cfg.verify.slope_slack})
        report["exponents"].append(row)

        if cfg.verify.cover and members[radii[0]].size:
            idx = [int(r["index"]) for r in labels
                   if int(r["j"]) == j and float(r["r"]) == radii[0] and r["member"] == "1"]
            pts = members[radii[0]]
            res = analysis.recursive_cover(pts, bits[idx], sc.gamma, sc.beta, root_radius=cfg.strata.R)
            covered = all(_leaf_covers(res, pts, sc.beta))
            good = res.step_counts(True)
            bad = res.step_counts(False)
            c0 = max([1.0, len(res.roots)] + [g * sc.gamma ** j for g in good]
                     + [b * sc.gamma ** (m + 2) for b in bad])
            Qp = res.max_bad_steps()
            leaf_bound = analysis.covering_bound(c0, sc.gamma, m, j, Qp, sc.beta)
            report["cover"][f"j={j}"] = {
                "depth_counts": res.depth_counts, "good_steps": good, "bad_steps": bad,
                "good_median": float(np.median(good)) if good else None,
                "bad_median": float(np.median(bad)) if bad else None,
                "c0_measured": c0, "Q_prime": Qp, "leaf_bound": leaf_bound, "covering_ok": covered,
                "leaf_count_ok": res.depth_counts[-1] <= leaf_bound}
            if not covered:
                failures.append(f"covering property fails for j={j}")
            if res.depth_counts[-1] > leaf_bound:
                failures.append(f"leaf count exceeds the covering bound for j={j}")

    if fits:
        plot_slope_fits(fits, out / "fits.svg", title="tube volume of strata")

    if cfg.verify.cone_split:
        dics: dict = {}
        cases = analysis.split_cases()
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            reps = list(pool.map(lambda c: analysis.cone_split_verify(c, dictionaries=dics), cases))
        for rep in reps:
            report["cone_split"].append({"case": rep.case, "passed": rep.passed, "detected_D": rep.detected_D,
                                         "predicted_D": rep.predicted.D_after, "kind": rep.detected_kind,
                                         "T": rep.detected_T, "distance_at_Y": rep.distance_at_Y})
            if not rep.passed:
                failures.append(f"cone-split case {rep.case} failed")
        try:
            c = cases[-1]
            analysis.cone_split_classify(c.W, SpaceTimePoint((0.0,) * 4, 0.1), 0.5)
            refused = False
        except analysis.ConeSplitRefused:
            refused = True
        report["cone_split"].append({"case": "negative_control", "passed": refused})
        if not refused:
            failures.append("negative control was not refused")

    report["failures"] = failures
    _dump(report, out / "verify.json")
    _write_summary(out, report)
    return EXIT_INVARIANT if failures else EXIT_OK


def _leaf_covers(res, pts: np.ndarray, depth: int):
    leaves = res.leaves(depth)
    for p in pts:
        yield any(max(np.linalg.norm(p[:-1] - np.array(n.center.x)), math.sqrt(abs(p[-1] - n.center.t)))
                  <= n.radius * (1 + 1e-12) for n in leaves)


def _write_summary(out: Path, report: dict) -> None:
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["empty", int(report["empty"])])
        for row in report["exponents"]:
            w.writerow([f"slope_j{row['j']}", _num(row["slope"])])
            w.writerow([f"predicted_slope_j{row['j']}", row["predicted_slope"]])
        for row in report["cone_split"]:
            w.writerow([f"cone_split_{row['case']}", int(bool(row["passed"]))])
        w.writerow(["failures", len(report.get("failures", []))])


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmfstrat", description="Quantitative stratification of harmonic map flow.")
    p.add_argument("command", choices=["simulate", "analyze", "verify", "all"])
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.command in ("simulate", "all"):
            traj = cmd_simulate(cfg, out)
            if traj.source == "simulated" and traj.flags.get("blown_up"):
                print(f"error: numerical breakdown: {traj.flags['reason']}", file=sys.stderr)
                return EXIT_NUMERIC
        if args.command in ("analyze", "all"):
            cmd_analyze(cfg, out, args.threads)
        if args.command in ("verify", "all"):
            return cmd_verify(cfg, out, args.threads)
        return EXIT_OK
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProjectionBreakdown, UnresolvableScale, TrajectoryRangeError, FloatingPointError) as exc:
        print(f"error: numerical breakdown: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvariantViolation as exc:
        print(f"error: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
