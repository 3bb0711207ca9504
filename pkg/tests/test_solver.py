import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmfstrat.geometry import GridSpec
from hmfstrat.solver import (ConstantTrajectory, Snapshot, TrajectoryRangeError, UnsupportedAnalytic, cfl_dt,
                             dirichlet_energy, load_trajectory, make_analytic, max_neighbour_jump, read_snapshot,
                             run, save_trajectory, smooth_random_data, step, write_snapshot)
from conftest import cone_values


def test_cfl_examples():
    assert cfl_dt(0.1, 2, 0.25) == pytest.approx(6.25e-4)
    assert cfl_dt(0.05, 2, 0.25) == pytest.approx(1.5625e-4)
    assert cfl_dt(1.0, 1, 0.5) == pytest.approx(0.25)


def _constant(g, n=2):
    vals = np.zeros(g.shape + (n + 1,))
    vals[..., -1] = 1.0
    return Snapshot(g, 0.0, vals)


def test_constant_is_a_fixed_point():
    g = GridSpec(2, 8, 0.25)
    s = _constant(g)
    out = step(s, cfl_dt(g.h, 2))
    assert np.array_equal(out.values, s.values)
    traj = run(s, 0.05, record_every=3)
    assert all(np.array_equal(sn.values, s.values) for sn in traj.snapshots)


def test_step_rejects_unstable_dt():
    g = GridSpec(1, 8, 0.25)
    with pytest.raises(ValueError):
        step(_constant(g), 1.0)


def test_step_keeps_sphere_constraint():
    s = smooth_random_data(GridSpec(2, 16, 2 * math.pi / 16), 2, seed=5)
    out = step(s, cfl_dt(s.grid.h, 2))
    assert out.max_norm_defect() <= 1e-10


def test_translation_equivariance():
    g = GridSpec(2, 16, 2 * math.pi / 16)
    s = smooth_random_data(g, 2, seed=2)
    half = np.roll(s.values, 8, axis=0)
    sym = Snapshot(g, 0.0, project_mean(s.values, half))
    out = step(sym, cfl_dt(g.h, 2))
    assert np.allclose(np.roll(out.values, 8, axis=0), out.values, atol=1e-14)


def project_mean(a, b):
    v = a + b
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 3), st.integers(0, 3))
def test_step_commutes_with_shifts_and_rotations(seed, sx, sy):
    g = GridSpec(2, 8, 2 * math.pi / 8)
    s = smooth_random_data(g, 2, seed=seed)
    rng = np.random.default_rng(seed)
    R, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    dt = cfl_dt(g.h, 2)
    moved = Snapshot(g, 0.0, np.roll(s.values, (sx, sy), axis=(0, 1)) @ R.T)
    a = np.roll(step(s, dt).values, (sx, sy), axis=(0, 1)) @ R.T
    assert np.allclose(step(moved, dt).values, a, atol=1e-12)


def _geodesic(n, k=1):
    g = GridSpec(1, n, 2 * math.pi / n)
    x = g.centers()[:, 0]
    return Snapshot(g, 0.0, np.stack([np.cos(k * x), np.sin(k * x), np.zeros_like(x)], -1))


def test_geodesic_is_a_steady_state():
    s = _geodesic(64)
    traj = run(s, 0.5, record_every=100)
    drift = np.max(np.abs(traj.snapshots[-1].values - s.values))
    assert drift <= 10 * (s.grid.h ** 2 + traj.dt)


def test_energy_non_increasing_on_random_data():
    g = GridSpec(2, 16, 2 * math.pi / 16)
    for seed in range(3):
        traj = run(smooth_random_data(g, 2, seed=seed, amplitude=0.6), 0.3, record_every=1)
        assert not traj.flags["blown_up"]
        e = np.array(traj.energies)
        assert np.all(e[1:] <= e[:-1] * (1 + 1e-8))
        assert e[-1] < e[0]


def test_refinement_is_second_order():
    sols = []
    for n in (16, 32, 64):
        g = GridSpec(1, n, 2 * math.pi / n)
        x = g.centers()[:, 0]
        u0 = np.stack([np.cos(x + 0.5 * np.sin(x)), np.sin(x + 0.5 * np.sin(x)), 0.3 * np.cos(2 * x)], -1)
        u0 /= np.linalg.norm(u0, axis=-1, keepdims=True)
        sols.append(run(Snapshot(g, 0.0, u0), 0.1, record_every=10 ** 6, sigma=0.1).snapshots[-1].values)
    # fine cells pair up into each coarse cell; the average sits at the coarse centre to O(h^2)
    coarse = lambda v: 0.5 * (v[0::2] + v[1::2])
    e1 = np.max(np.abs(coarse(sols[1]) - sols[0]))
    e2 = np.max(np.abs(coarse(sols[2]) - sols[1]))
    assert 2.5 < e1 / e2 < 5.5


def test_concentrated_equivariant_data_blows_up():
    n = 64
    g = GridSpec(2, n, 2.0 / n)
    x = g.centers()
    r = np.linalg.norm(x, axis=1)
    th = np.arctan2(x[:, 1], x[:, 0])
    hh = 2 * np.arctan(r / 0.1) + np.pi * np.clip(r / 0.8, 0, 1) ** 2
    hh = np.where(r >= 0.8, 2 * np.pi, np.minimum(hh, 2 * np.pi))
    u = np.stack([np.sin(hh) * np.cos(th), np.sin(hh) * np.sin(th), np.cos(hh)], -1)
    traj = run(Snapshot(g, 0.0, u.reshape(g.shape + (3,))), 0.1, record_every=50)
    jumps = [max_neighbour_jump(s.values, 2) for s in traj.snapshots]
    assert traj.flags["blown_up"] or jumps[-1] > 2 * jumps[0]
    assert traj.flags["blowup_time"] is None or traj.flags["blowup_time"] < 0.1


def test_analytic_kinds():
    const = make_analytic("constant", 2, 2, p=[0.0, 1.0, 0.0])
    u, ok = const.evaluate(np.zeros((3, 2)), np.array([-1.0, 0.0, 5.0]))
    assert ok.all() and np.allclose(u, [0, 1, 0])
    cone = make_analytic("static_cone", 3)
    x = np.array([[1.0, 2.0, 2.0], [0.3, -0.1, 0.2]])
    u, ok = cone.evaluate(x, np.zeros(2))
    assert np.allclose(u, cone_values(x))
    qs = make_analytic("quasistatic_cone", 3, T=0.0)
    before, _ = qs.evaluate(x, np.array([-0.5, 0.0]))
    after, _ = qs.evaluate(x, np.array([0.1, 0.1]))
    assert np.allclose(before, cone_values(x))
    assert np.allclose(after, [0, 0, 1])
    with pytest.raises(UnsupportedAnalytic):
        make_analytic("static_cone", 2)
    with pytest.raises(UnsupportedAnalytic):
        make_analytic("spiral", 3)


def test_cone_derivatives_match_closed_form():
    cone = make_analytic("static_cone", 3)
    x = np.array([[0.4, -0.3, 0.5]])
    f = cone.derivatives(x, np.zeros(1), hessian=True)
    r = np.linalg.norm(x)
    grad = (np.eye(3) - np.outer(x[0], x[0]) / r ** 2) / r
    assert np.allclose(f["grad"][0], grad)
    assert np.sum(f["grad"] ** 2) == pytest.approx(2 / r ** 2)
    eps = 1e-5
    num = np.stack([(cone.derivatives(x + eps * e, np.zeros(1))["grad"][0]
                     - cone.derivatives(x - eps * e, np.zeros(1))["grad"][0]) / (2 * eps) for e in np.eye(3)])
    assert np.allclose(f["hess"][0], num, atol=1e-6)


def test_shrinking_profile_is_backward_self_similar():
    traj = make_analytic("shrinking_profile", 3, 3)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (20, 3))
    t = -rng.uniform(0.1, 1, 20)
    a, _ = traj.evaluate(x, t)
    b, _ = traj.evaluate(0.5 * x, 0.25 * t)
    assert np.allclose(a, b, atol=1e-12)
    _, ok = traj.evaluate(x, -t)
    assert not ok.any()


def test_simulated_trajectory_interpolates_and_checks_range():
    g = GridSpec(1, 32, 2 * math.pi / 32)
    traj = run(_geodesic(32), 0.05, record_every=5)
    u, ok = traj.evaluate(g.centers()[:4], np.full(4, 0.02))
    assert ok.all() and np.allclose(np.linalg.norm(u, axis=-1), 1)
    with pytest.raises(TrajectoryRangeError):
        traj.check_time_range(-1.0, 0.0)


def test_snapshot_binary_layout(tmp_path):
    s = smooth_random_data(GridSpec(2, 4, 0.5), 2, seed=1)
    s.t = 0.125
    path = tmp_path / "s.hmf"
    write_snapshot(path, s)
    raw = path.read_bytes()
    magic, m, n, cells, h, t = struct.unpack_from("<4sIIIdd", raw)
    assert (magic, m, n, cells, h, t) == (b"HMF1", 2, 2, 4, 0.5, 0.125)
    assert len(raw) == struct.calcsize("<4sIIIdd") + 16 * 3 * 8
    back = read_snapshot(path)
    assert np.array_equal(back.values, s.values)


def test_trajectory_roundtrip(tmp_path):
    traj = run(_geodesic(16), 0.02, record_every=4)
    save_trajectory(traj, tmp_path / "sim")
    back = load_trajectory(tmp_path / "sim")
    assert len(back.snapshots) == len(traj.snapshots)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(back.snapshots, traj.snapshots))
    (tmp_path / "sim" / "snap_00001.hmf").unlink()
    with pytest.raises(FileNotFoundError, match="snap_00001.hmf"):
        load_trajectory(tmp_path / "sim")


def test_analytic_manifest_has_no_snapshots(tmp_path):
    path = save_trajectory(make_analytic("static_cone", 3), tmp_path / "cone")
    info = json.loads(path.read_text())
    assert info["source"] == "analytic" and info["snapshots"] == []
    assert list((tmp_path / "cone").glob("*.hmf")) == []
    back = load_trajectory(tmp_path / "cone")
    x = np.array([[0.2, 0.1, -0.4]])
    assert np.allclose(back.evaluate(x, np.zeros(1))[0], cone_values(x))


def test_energy_of_geodesic():
    s = _geodesic(256, k=2)
    # |u'|^2 = k^2 integrated over the 2 pi period, with a forward-difference factor close to 1
    assert dirichlet_energy(s.values, s.grid.h, 1) == pytest.approx(4 * 2 * math.pi, rel=1e-3)


def test_constant_trajectory_is_static():
    assert ConstantTrajectory(2, [0, 0, 1]).is_static
