import csv
import math

import numpy as np
import pytest
from scipy.special import gamma, gammaincc

from hmfstrat.energies import (EnergyError, dirichlet_scale_invariant, gaussian_scale_energy, shell_breakpoints,
                               struwe_annulus, struwe_shells, struwe_total, time_derivative_energy,
                               write_energy_csv)
from hmfstrat.geometry import GridSpec, SpaceTimePoint
from hmfstrat.solver import RescaledTrajectory, make_analytic, run, smooth_random_data

O3 = SpaceTimePoint((0.0, 0.0, 0.0), 0.0)


@pytest.fixture(scope="module")
def cone():
    return make_analytic("static_cone", 3)


@pytest.fixture(scope="module")
def smooth_run():
    g = GridSpec(2, 32, 2 * math.pi / 32)
    return run(smooth_random_data(g, 2, seed=3, amplitude=0.6), 0.6, record_every=4)


def test_constant_energies_vanish():
    c = make_analytic("constant", 3)
    X = SpaceTimePoint((0.1, 0.2, 0.3), 1.0)
    assert dirichlet_scale_invariant(c, X, 0.5, 16, 4).value == 0.0
    assert time_derivative_energy(c, X, 0.5).value == 0.0
    assert struwe_annulus(c, X, 0.5, 0.1).value == 0.0
    assert struwe_total(c, X, 0.5, 0.01).value == 0.0
    assert gaussian_scale_energy(c, X, 0.3).value == 0.0


def test_cone_dirichlet_matches_closed_form(cone):
    # int_{B_r} 2/|x|^2 = 8 pi r, times the time length 2 r^2, over r^3
    vals = [dirichlet_scale_invariant(cone, O3, r, n_space=128).value for r in (0.5, 1.0, 2.0)]
    for v in vals:
        assert v == pytest.approx(16 * math.pi, rel=0.02)
    assert (max(vals) - min(vals)) / min(vals) <= 0.01


def test_dirichlet_invariant_under_parabolic_rescaling(cone):
    X = SpaceTimePoint((0.3, 0.2, 0.1), 0.0)
    lam = 0.37
    a = dirichlet_scale_invariant(cone, X, 0.2, 32, 4).value
    scaled = RescaledTrajectory(cone, lam)
    Xs = SpaceTimePoint(tuple(lam * np.array(X.x)), lam ** 2 * X.t)
    b = dirichlet_scale_invariant(scaled, Xs, lam * 0.2, 32, 4).value
    assert b == pytest.approx(a, rel=1e-10)


def test_time_derivative_vanishes_on_static(cone):
    assert time_derivative_energy(cone, O3, 0.5).value == 0.0


def test_time_derivative_refinement():
    vals = []
    for n in (16, 32):
        g = GridSpec(2, n, 2 * math.pi / n)
        traj = run(smooth_random_data(g, 2, seed=7, amplitude=0.6), 0.5, record_every=2)
        assert not traj.flags["blown_up"]
        vals.append(time_derivative_energy(traj, SpaceTimePoint((0.3, -0.2), 0.3), 0.4, 32, 8).value)
    assert vals[0] == pytest.approx(vals[1], rel=0.1)


@pytest.mark.parametrize("kind,X,extra", [
    ("constant", O3, {}),
    ("static_cone", O3, {}),
    ("quasistatic_cone", SpaceTimePoint((0.0, 0.0, 0.0), -0.01), {"T": 0.0}),
    ("shrinking_profile", O3, {}),
])
def test_struwe_vanishes_at_self_similar_centre(kind, X, extra):
    traj = make_analytic(kind, 3, 3 if kind == "shrinking_profile" else 2, **extra)
    for r1, r2 in [(1.0, 0.25), (0.25, 0.0625), (0.0625, 0.015625)]:
        assert struwe_annulus(traj, X, r1, r2).value <= 1e-8


def _kernel_time_integral(d2, a, b, m):
    """int_a^b tau^(-(m+2)/2) exp(-d2 / 4 tau) d tau, via incomplete gamma functions."""
    s = m / 2
    return (4 / d2) ** s * gamma(s) * (gammaincc(s, d2 / (4 * b)) - gammaincc(s, d2 / (4 * a)))


def _static_struwe_oracle(traj, x0, r1, r2, n):
    m = traj.m
    ax = -r1 + (np.arange(n) + 0.5) * (2 * r1 / n)
    off = np.stack([g.ravel() for g in np.meshgrid(*([ax] * m), indexing="ij")], -1)
    d2 = np.einsum("ij,ij->i", off, off)
    off, d2 = off[d2 < r1 * r1], d2[d2 < r1 * r1]
    f = traj.derivatives(x0 + off, np.zeros(len(off)))
    dens = np.sum(np.einsum("ni,nia->na", off, f["grad"]) ** 2, axis=1)
    lo = np.where(d2 < r2 * r2, r2 * r2, 0.0)
    time = np.where(lo > 0, _kernel_time_integral(d2, np.maximum(lo, 1e-300), r1 * r1, m),
                    _kernel_time_integral(d2, 1e-300, r1 * r1, m))
    return float(np.sum(dens * time) * (2 * r1 / n) ** m)


def test_off_centre_struwe_matches_oracle(cone):
    X = SpaceTimePoint((1.0, 0.0, 0.0), 0.0)
    val = struwe_annulus(cone, X, 0.5, 0.25).value
    ref = _static_struwe_oracle(cone, np.array(X.x), 0.5, 0.25, 4 * 24)
    assert val > 0
    assert val == pytest.approx(ref, rel=0.02)


def test_struwe_annuli_are_additive(cone):
    X = SpaceTimePoint((0.4, 0.1, 0.0), 0.0)
    full = struwe_annulus(cone, X, 0.5, 0.125).value
    parts = struwe_annulus(cone, X, 0.5, 0.25).value + struwe_annulus(cone, X, 0.25, 0.125).value
    assert full == pytest.approx(parts, rel=1e-12)
    shells = struwe_shells(cone, X, 0.5, 0.125)
    assert all(s[2] >= 0 for s in shells)


def test_struwe_total_monotone_in_cutoff(cone):
    X = SpaceTimePoint((0.3, 0.0, 0.0), 0.0)
    vals = [struwe_total(cone, X, 0.25, rho).value for rho in (0.25, 0.125, 0.0625)]
    assert vals[0] <= vals[1] <= vals[2]
    with pytest.raises(EnergyError):
        struwe_total(cone, X, 0.25, 0.0)


def test_struwe_resolution_guard(cone):
    X = SpaceTimePoint((0.6, 0.0, 0.0), 0.0)
    a = struwe_annulus(cone, X, 0.5, 0.25, n_s=24).value
    b = struwe_annulus(cone, X, 0.5, 0.25, n_s=48).value
    assert a == pytest.approx(b, rel=0.1)


def test_shell_breakpoints():
    assert shell_breakpoints(1.0, 0.125) == [1.0, 0.5, 0.25, 0.125]
    assert shell_breakpoints(0.7, 0.3) == [0.7, 0.5, 0.3]
    with pytest.raises(EnergyError):
        shell_breakpoints(0.1, 0.2)


def test_gaussian_energy_of_cone_is_scale_free(cone):
    a = gaussian_scale_energy(cone, O3, 0.2).value
    b = gaussian_scale_energy(cone, O3, 0.1).value
    assert a > 0
    assert b == pytest.approx(a, rel=0.02)


def test_gaussian_energy_monotone_on_smooth_flow(smooth_run):
    X = SpaceTimePoint((0.1, 0.2), 0.6)
    vals = [gaussian_scale_energy(smooth_run, X, r, n=64).value for r in (0.4, 0.2, 0.1)]
    assert vals[1] <= vals[0] * 1.05
    assert vals[2] <= vals[1] * 1.05


def test_energy_csv(tmp_path, cone):
    reps = [dirichlet_scale_invariant(cone, O3, 0.5, 16, 2), struwe_annulus(cone, O3, 0.5, 0.25)]
    path = tmp_path / "e.csv"
    write_energy_csv(reps, path)
    rows = list(csv.DictReader(path.open()))
    assert [r["kind"] for r in rows] == ["dirichlet", "struwe"]
    assert set(rows[0]) == {"x0", "x1", "x2", "t", "kind", "r1", "r2", "value", "cutoff", "cells"}
