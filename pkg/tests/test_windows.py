import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmfstrat.geometry import GridSpec, SpaceTimePoint
from hmfstrat.solver import Snapshot, SimulatedTrajectory, make_analytic
from hmfstrat.windows import (GridMismatch, WindowRejected, WindowSpec, l2_distance_sq, sample_window,
                              weighted_mean, window_nodes)
from conftest import cone_values

SPEC3 = WindowSpec(3, 9, 5)


def test_constant_window(origin3):
    win = sample_window(make_analytic("constant", 3), SpaceTimePoint((0.3, 0.1, 0.0), 2.0), 0.7, SPEC3)
    assert np.allclose(win.values[win.usable], [0, 0, 1])
    assert np.allclose(weighted_mean(win), [0, 0, 1])


def test_cone_windows_scale_invariant(origin3):
    cone = make_analytic("static_cone", 3)
    a = sample_window(cone, origin3, 0.5, SPEC3)
    b = sample_window(cone, origin3, 0.25, SPEC3)
    assert np.array_equal(a.usable, b.usable)
    assert np.allclose(a.values, b.values, atol=1e-15)
    assert l2_distance_sq(a, b) == pytest.approx(0.0, abs=1e-28)


def test_odd_window_has_origin_node():
    ax, tn, x, in_ball = window_nodes(WindowSpec(2, 5, 5))
    assert 0.0 in ax and 0.0 in tn
    assert np.all(np.linalg.norm(x[in_ball], axis=1) < 1)


def test_off_axis_cone_window_matches_closed_form():
    x0 = np.array([1.0, 0.0, 0.0])
    spec = WindowSpec(3, 7, 3)
    _, _, xn, in_ball = window_nodes(spec)
    exact = cone_values(x0 + 0.1 * xn[in_ball])
    errs = []
    for n in (32, 64):
        g = GridSpec(3, n, 4.0 / n, periodic=False)
        vals = cone_values(g.centers()).reshape(g.shape + (3,))
        traj = SimulatedTrajectory([Snapshot(g, 0.0, vals), Snapshot(g, 1.0, vals)], dt=1.0)
        win = sample_window(traj, SpaceTimePoint(tuple(x0), 0.5), 0.1, spec)
        errs.append(np.max(np.abs(win.values[in_ball][:, 0, :] - exact)))
    assert errs[1] < errs[0] / 3
    assert errs[1] < 1e-3


def test_antipodal_constants_in_one_dimension():
    spec = WindowSpec(1, 17, 17)
    X = SpaceTimePoint((0.0,), 0.0)
    a = sample_window(make_analytic("constant", 1, 2, p=[0, 0, 1]), X, 1.0, spec)
    b = sample_window(make_analytic("constant", 1, 2, p=[0, 0, -1]), X, 1.0, spec)
    # |p - (-p)|^2 = 4 over Vol(P_1) = 4
    assert l2_distance_sq(a, b) == pytest.approx(16.0, abs=1e-10)
    assert l2_distance_sq(a, a) == 0.0


def _random_window(seed, spec=WindowSpec(2, 7, 5)):
    traj = make_analytic("split_cone", 2, 2, k=2, center=np.random.default_rng(seed).uniform(-2, 2, 2))
    return sample_window(traj, SpaceTimePoint((0.0, 0.0), 0.0), 1.0, spec, max_masked=1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000))
def test_triangle_inequality_on_square_roots(i, j, k):
    a, b, c = _random_window(i), _random_window(j), _random_window(k)
    d = lambda u, v: math.sqrt(l2_distance_sq(u, v))
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 1000))
def test_distance_invariant_under_target_rotation(i, seed):
    a, b = _random_window(i), _random_window(i + 1)
    R, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((3, 3)))
    assert l2_distance_sq(a.rotated(R), b.rotated(R)) == pytest.approx(l2_distance_sq(a, b), abs=1e-12)


def test_nested_scales_of_shrinker_agree():
    traj = make_analytic("shrinking_profile", 3, 3)
    spec = WindowSpec(3, 7, 7, backward_only=True)
    X = SpaceTimePoint((0.0, 0.0, 0.0), 0.0)
    a = sample_window(traj, X, 1.0, spec)
    b = sample_window(traj, X, 0.5, spec)
    assert l2_distance_sq(a, b) <= 1e-20


def test_rejections():
    traj = make_analytic("shrinking_profile", 3, 3)
    X = SpaceTimePoint((0.0, 0.0, 0.0), 0.0)
    with pytest.raises(WindowRejected):
        sample_window(traj, X, 1.0, WindowSpec(3, 7, 7))
    with pytest.raises(GridMismatch):
        sample_window(traj, X, 1.0, WindowSpec(2, 7, 7))
    g = GridSpec(1, 16, 1 / 16)
    vals = np.tile([0.0, 0.0, 1.0], (16, 1))
    sim = SimulatedTrajectory([Snapshot(g, 0.0, vals), Snapshot(g, 1.0, vals)], dt=1.0)
    with pytest.raises(WindowRejected):
        sample_window(sim, SpaceTimePoint((0.0,), 0.5), 0.3, WindowSpec(1, 5, 3))
    a = sample_window(sim, SpaceTimePoint((0.0,), 0.5), 0.1, WindowSpec(1, 5, 3))
    b = sample_window(sim, SpaceTimePoint((0.0,), 0.5), 0.1, WindowSpec(1, 7, 3))
    with pytest.raises(GridMismatch):
        l2_distance_sq(a, b)
