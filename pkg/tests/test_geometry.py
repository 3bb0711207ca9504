import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmfstrat.geometry import (GeometryError, GridSpec, SpaceTimePoint, ball_volume, parabolic_distance,
                               tubular_volume, unit_ball_volume)

coord = st.floats(-5, 5, allow_nan=False)
points = st.builds(lambda a, b, t: SpaceTimePoint((a, b), t), coord, coord, coord)


def test_distance_examples():
    o = SpaceTimePoint((0.0,), 0.0)
    assert parabolic_distance(o, SpaceTimePoint((0.0,), 4.0)) == 2.0
    assert parabolic_distance(SpaceTimePoint((3.0,), 0.0), o) == 3.0
    assert parabolic_distance(SpaceTimePoint((1.0,), 0.0), SpaceTimePoint((0.0,), -1.0)) == 1.0


@settings(max_examples=200, deadline=None)
@given(points, points, points)
def test_distance_is_a_metric(a, b, c):
    dab = parabolic_distance(a, b)
    assert dab == pytest.approx(parabolic_distance(b, a))
    assert parabolic_distance(a, a) == 0.0
    assert parabolic_distance(a, c) <= dab + parabolic_distance(b, c) + 1e-9


def test_ball_volume_against_product_formula():
    # spatial ball volume times the time length 2 r^2
    assert ball_volume(1.0, 1) == pytest.approx(2.0 * 2.0)
    assert ball_volume(1.0, 2) == pytest.approx(math.pi * 2.0)
    assert ball_volume(2.0, 1) == pytest.approx(32.0)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)


def test_ball_volume_rejects_nonpositive_radius():
    with pytest.raises(GeometryError):
        ball_volume(0.0, 2)


def test_tube_of_empty_set_is_zero():
    assert tubular_volume([], 0.1, GridSpec(2, 16, 0.02)) == 0.0


@pytest.mark.parametrize("m", [1, 2, 3])
def test_tube_of_point_is_the_ball(m):
    r = 0.25
    grid = GridSpec(m, 24, r / 8, periodic=False)
    vol = tubular_volume([SpaceTimePoint((0.0,) * m, 0.0)], r, grid)
    assert vol == pytest.approx(ball_volume(r, m), rel=0.1)


def test_tube_rejects_coarse_grid():
    with pytest.raises(GeometryError):
        tubular_volume([SpaceTimePoint((0.0,), 0.0)], 0.1, GridSpec(1, 8, 0.05))


def _axis_tube(r, h_factor=4):
    times = np.arange(0.0, 1.0 + 1e-12, 2 * r * r)
    pts = np.column_stack([np.zeros((len(times), 3)), times])
    grid = GridSpec(3, int(math.ceil(2 * r / (r / h_factor))) + 4, r / h_factor, periodic=False)
    return tubular_volume(pts, r, grid, time_extent=(0.0, 1.0))


def test_axis_segment_tube_scales_like_r_cubed():
    radii = [2.0 ** -k for k in range(3, 7)]
    vols = [_axis_tube(r) for r in radii]
    slope = np.polyfit(np.log(radii), np.log(vols), 1)[0]
    assert slope == pytest.approx(3.0, abs=0.2)
    # the tube is a cylinder of radius r over unit time
    assert vols[-1] == pytest.approx(4 / 3 * math.pi * radii[-1] ** 3, rel=0.15)


def test_tube_monotone_in_radius_and_set():
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(-0.5, 0.5, (20, 2)), rng.uniform(0, 0.2, 20)])
    grid = GridSpec(2, 128, 1 / 64, periodic=False)
    v_small = tubular_volume(pts[:10], 0.1, grid)
    v_all = tubular_volume(pts, 0.1, grid)
    v_big = tubular_volume(pts, 0.15, grid)
    assert v_small <= v_all <= v_big


def test_tube_grid_convergence():
    rng = np.random.default_rng(4)
    pts = np.column_stack([rng.uniform(-0.3, 0.3, (15, 2)), rng.uniform(0, 0.1, 15)])
    r = 0.1
    coarse = tubular_volume(pts, r, GridSpec(2, 40, r / 4, periodic=False))
    fine = tubular_volume(pts, r, GridSpec(2, 80, r / 8, periodic=False))
    assert abs(coarse - fine) <= 0.15 * fine


def test_periodic_tube_wraps():
    grid = GridSpec(1, 64, 1 / 64)
    inside = tubular_volume([SpaceTimePoint((0.0,), 0.0)], 0.1, grid)
    edge = tubular_volume([SpaceTimePoint((0.5 - 1e-9,), 0.0)], 0.1, grid)
    assert edge == pytest.approx(inside, rel=0.05)
