import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmfstrat.candidates import (Candidate, Dictionary, EmptyDictionary, InvariancePlane, best_fit, complement,
                                 first_shrinker, grassmann_samples, structure_tensor, symmetry_count)
from hmfstrat.geometry import SpaceTimePoint
from hmfstrat.solver import make_analytic
from hmfstrat.windows import WindowSpec, l2_distance_sq, sample_window

SPEC = WindowSpec(3, 9, 9)
O3 = SpaceTimePoint((0.0, 0.0, 0.0), 0.0)


@pytest.fixture(scope="module")
def dic3():
    return Dictionary(3, 2)


@pytest.fixture(scope="module")
def cone_window():
    return sample_window(make_analytic("static_cone", 3), O3, 1.0, SPEC)


def test_symmetry_counts():
    e = np.eye(3)
    assert symmetry_count(Candidate("constant", 3, 2, np.zeros((0, 3)), np.eye(3), p=e[2])) == 5
    assert symmetry_count(Candidate("cone", 3, 2, e, np.eye(3))) == 2
    assert symmetry_count(Candidate("shrinking", 3, 3, e, np.eye(4), profile=first_shrinker(3))) == 0
    assert symmetry_count(Candidate("quasistatic", 4, 2, np.eye(4)[:3], np.eye(3), T=0.0)) == 1


def test_candidate_windows(cone_window):
    const = Candidate("constant", 3, 2, np.zeros((0, 3)), np.eye(3), p=np.array([0.0, 1.0, 0.0]))
    w = const.evaluate_window(SPEC)
    assert np.allclose(w.values[w.usable], [0, 1, 0])
    cone = Candidate("cone", 3, 2, np.eye(3), np.eye(3))
    cw = cone.evaluate_window(SPEC)
    assert np.array_equal(cw.values, cone_window.values)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_candidate_rotation_equivariance(seed):
    R, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((3, 3)))
    cone = Candidate("cone", 3, 2, np.eye(3), np.eye(3))
    a = cone.rotated(R).evaluate_window(SPEC)
    b = cone.evaluate_window(SPEC)
    assert np.allclose(a.values, b.values @ R.T, atol=1e-14)


def test_best_fit_constant_window(dic3):
    win = sample_window(make_analytic("constant", 3), SpaceTimePoint((0.2, 0.0, 0.1), 0.3), 0.5, SPEC)
    bf = best_fit(win, 5, dic3)
    assert bf.distance <= 1e-12 and bf.candidate.kind == "constant"
    assert bf.plane.time_kind == "line" and bf.plane.d == 3


def test_best_fit_cone_at_level_two(dic3, cone_window):
    bf = best_fit(cone_window, 2, dic3)
    assert bf.distance <= 1e-6
    assert bf.candidate.kind == "cone" and bf.plane.d == 0
    assert l2_distance_sq(cone_window, bf.candidate) == pytest.approx(bf.distance, abs=1e-10)


def test_best_fit_cone_at_level_three_against_dense_sample(dic3, cone_window):
    bf = best_fit(cone_window, 3, dic3)
    dense = Dictionary(3, 2, n_planes=640, refine_rounds=0, seed=11)
    ref = best_fit(cone_window, 3, dense)
    assert bf.distance > 0.1
    assert bf.distance >= 0.1 * ref.distance
    assert bf.distance <= ref.distance * (1 + 1e-3)


def test_best_fit_recovers_rotated_split_cone():
    m = 4
    rng = np.random.default_rng(1)
    R, _ = np.linalg.qr(rng.standard_normal((m, m)))
    traj = make_analytic("split_cone", m, 2, k=3, transverse=R[:3])
    win = sample_window(traj, SpaceTimePoint((0.0,) * m, 0.0), 1.0, WindowSpec(m, 9, 3))
    bf = best_fit(win, 3, Dictionary(m, 2))
    assert bf.distance <= 1e-3
    assert bf.candidate.kind == "cone"
    P_true = R[:3].T @ R[:3]
    assert np.linalg.norm(bf.candidate.P.T @ bf.candidate.P - P_true) < 0.05


def test_best_fit_finds_quasistatic_time():
    traj = make_analytic("quasistatic_cone", 3, T=0.5)
    win = sample_window(traj, O3, 1.0, SPEC)
    bf = best_fit(win, 0, Dictionary(3, 2))
    assert bf.distance <= 1e-12
    assert bf.candidate.kind == "quasistatic" and bf.plane.time_kind == "halfline"
    assert abs(bf.plane.T - 0.5) <= SPEC.h_t


def test_best_fit_shrinker():
    traj = make_analytic("shrinking_profile", 3, 3)
    spec = WindowSpec(3, 9, 9, backward_only=True)
    win = sample_window(traj, O3, 1.0, spec)
    bf = best_fit(win, 0, Dictionary(3, 3))
    assert bf.distance <= 1e-12 and bf.candidate.kind == "shrinking"


@settings(max_examples=8, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.2, 1.0))
def test_best_fit_monotone_in_j(a, b, s):
    dic = Dictionary(3, 2, n_planes=8, refine_rounds=1)
    win = sample_window(make_analytic("static_cone", 3), SpaceTimePoint((a, b, 0.3), 0.0), s, SPEC)
    d = [best_fit(win, j, dic).distance for j in range(0, 6)]
    assert all(x >= 0 for x in d)
    assert all(d[i] <= d[i + 1] + 1e-12 for i in range(5))


def test_empty_dictionary_level(dic3, cone_window):
    with pytest.raises(EmptyDictionary):
        best_fit(cone_window, 6, dic3)


def test_structure_tensor_examples(cone_window):
    const = sample_window(make_analytic("constant", 3), O3, 1.0, SPEC)
    st0 = structure_tensor(const)
    assert np.all(st0.Q == 0) and st0.tau == 0 and st0.D_hat == 5
    stc = structure_tensor(cone_window)
    assert stc.D_hat == 2 and stc.tau == 0.0
    assert np.all(stc.eigenvalues > 1e-6)
    split = sample_window(make_analytic("split_cone", 4, 2, k=3), SpaceTimePoint((0.0,) * 4, 0.0), 1.0,
                          WindowSpec(4, 9, 3))
    sts = structure_tensor(split)
    assert sts.D_hat == 3
    assert np.sum(sts.eigenvalues <= 1e-6) == 1


def test_structure_tensor_consistent_with_exact_fits(dic3, cone_window):
    for win in (cone_window, sample_window(make_analytic("constant", 3), O3, 1.0, SPEC)):
        est = structure_tensor(win, tol_sym=1e-6)
        for j in range(0, 6):
            try:
                d = best_fit(win, j, dic3).distance
            except EmptyDictionary:
                continue
            if d < 1e-12 * SPEC.volume:
                assert est.D_hat >= j


def test_grassmann_samples_are_orthonormal_and_seeded():
    a = grassmann_samples(2, 4, 16, seed=3)
    b = grassmann_samples(2, 4, 16, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(np.allclose(P @ P.T, np.eye(2)) for P in a)
    coords = [P for P in a if np.allclose(np.abs(P).sum(), 2.0)]
    assert len(coords) >= 6


def test_invariance_plane_distance():
    V = np.array([[0.0, 0.0, 1.0]])
    o = SpaceTimePoint((0.0, 0.0, 0.0), 0.0)
    line = InvariancePlane(V, o, "line")
    assert line.distance(SpaceTimePoint((3.0, 4.0, 7.0), 9.0)) == pytest.approx(5.0)
    half = InvariancePlane(V, o, "halfline", 1.0)
    assert half.distance(SpaceTimePoint((0.0, 0.0, 2.0), 5.0)) == pytest.approx(2.0)
    assert half.distance(SpaceTimePoint((0.0, 0.0, 2.0), -5.0)) == 0.0
    sl = InvariancePlane(np.zeros((0, 3)), o, "slice")
    assert sl.distance(SpaceTimePoint((0.5, 0.0, 0.0), -1.0)) == 1.0
    assert complement(np.eye(3)[:2], 3).shape == (1, 3)


def test_dictionary_config_records_families(dic3):
    cfg = dic3.config()
    kinds = [(f["kind"], f["D"]) for f in cfg["families"]]
    assert ("constant", 5) in kinds and ("cone", 2) in kinds and ("quasistatic", 0) in kinds
    assert cfg["n_planes"] == 64
