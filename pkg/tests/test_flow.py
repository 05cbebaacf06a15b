import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravalloc.flow import (
    BasinMap,
    assign_basins,
    capture_time_fraction,
    cell_statistics,
    check_time_potential,
    compile_field,
    flow_many,
    integrate_flow,
    liouville_ratio,
    trap_radii,
)
from gravalloc.force import SingularityError, ball_field
from gravalloc.pointfield import Ball, DomainSpec, StarField, kappa, sample_poisson


@pytest.fixture(scope="module")
def torus3():
    f = sample_poisson(DomainSpec(3, "torus", 3.0), 1.0, 17)
    return f, compile_field(f)


@pytest.fixture(scope="module")
def basins(torus3):
    f, cf = torus3
    return assign_basins(f, n=32, compiled=cf)


def _single_star_field(d=3):
    dom = DomainSpec(d, "box", 4.0)
    f = StarField(np.zeros((1, d)), 1.0, dom)
    return f, ball_field(f, Ball((0.0,) * d, 0.5))


def test_radial_capture_time_matches_closed_form():
    # one star at the center of a unit-density ball: dr/dt = -1/r^2 + kappa r
    f, cf = _single_star_field()
    r0, r_cap = 0.4, 1e-3
    traj = integrate_flow(np.array([r0, 0.0, 0.0]), f, compiled=cf, r_cap=r_cap, rtol=1e-9)
    k = kappa(3)
    want = math.log((1 - k * r_cap**3) / (1 - k * r0**3)) / (3 * k)
    assert traj.terminal == ("captured", 0)
    assert traj.times[-1] == pytest.approx(want, rel=1e-5)
    assert np.allclose(traj.positions[:, 1:], 0.0, atol=1e-12)


def test_start_inside_capture_ball_rejected():
    f, cf = _single_star_field()
    with pytest.raises(SingularityError):
        integrate_flow(np.array([1e-4, 0.0, 0.0]), f, compiled=cf)


@settings(max_examples=15, deadline=None)
@given(x=st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3))
def test_trajectory_invariants(torus3, x):
    f, cf = torus3
    x = np.array(x)
    if np.min(np.linalg.norm(f.domain.wrap(f.points - x), axis=1)) < 0.01:
        return
    traj = integrate_flow(x, f, compiled=cf)
    assert np.all(np.diff(traj.times) > 0)
    assert np.all(np.diff(traj.arclength) >= 0)
    assert np.all(np.diff(traj.potential) <= 1e-6 * (1 + np.abs(traj.potential[1:])))
    assert traj.status == "captured"
    # Cauchy-Schwarz makes the ratio at most 1 on the exact curve
    assert check_time_potential(traj, 1e-4).holds


def test_batch_matches_single_trajectories(torus3):
    f, cf = torus3
    starts = np.array([[0.3, 0.2, -0.4], [-1.1, 0.7, 0.9], [1.2, -1.3, 0.1]])
    lab, status, times, _, _ = flow_many(starts, cf)
    for s, l, t in zip(starts, lab, times):
        traj = integrate_flow(s, f, compiled=cf)
        assert traj.star == l
        assert traj.times[-1] == pytest.approx(t, rel=1e-9)


def test_trap_radii_nonnegative(torus3):
    _, cf = torus3
    r = trap_radii(cf)
    assert r.shape == (len(cf.stars),)
    assert np.all(r >= 0)


def test_basin_volumes_sum_to_torus(torus3, basins):
    f, _ = torus3
    assert basins.timeout_fraction == 0.0
    assert basins.volumes().sum() == pytest.approx(f.domain.volume)
    assert np.all(basins.counts() > 0)


def test_basin_map_round_trips(tmp_path, basins):
    path = tmp_path / "basins.bin"
    basins.to_binary(path)
    back = BasinMap.from_binary(path)
    assert np.array_equal(back.labels, basins.labels)
    basins.to_csv(tmp_path / "basins.csv")
    lines = (tmp_path / "basins.csv").read_text().splitlines()
    assert len(lines) == basins.labels.size + 1


def test_cell_statistics_consistency(torus3, basins):
    f, _ = torus3
    s = cell_statistics(basins, f, 0, R=0.5, n_samples=200)
    assert 0 <= s.tentacle_volume <= s.volume
    assert np.all(s.y_samples <= s.diameter + 1e-12)
    assert cell_statistics(basins, f, 0, R=0.0).tentacle_volume == pytest.approx(s.volume)


def test_liouville_ratio_d3(torus3):
    f, cf = torus3
    centre = np.array([0.05, 0.05, 0.05])
    gap = float(np.min(np.linalg.norm(f.domain.wrap(f.points - centre), axis=1)))
    ball = Ball(tuple(centre), 0.05 * gap)
    lam = len(f) / f.domain.volume
    t = 0.01
    ratio = liouville_ratio(ball, f, t, compiled=cf, mesh_level=3)
    assert ratio == pytest.approx(math.exp(3 * kappa(3) * lam * t), rel=1e-3)
    back = liouville_ratio(ball, f, t, direction="backward", compiled=cf, mesh_level=3)
    assert back == pytest.approx(math.exp(-3 * kappa(3) * lam * t), rel=1e-3)


def test_liouville_ratio_jacobian_path_d4():
    f = sample_poisson(DomainSpec(4, "torus", 2.5), 1.0, 8)
    cf = compile_field(f)
    centre = np.full(4, 0.02)
    gap = float(np.min(np.linalg.norm(f.domain.wrap(f.points - centre), axis=1)))
    lam = len(f) / f.domain.volume
    t = 0.005
    ratio = liouville_ratio(Ball(tuple(centre), 0.05 * gap), f, t, compiled=cf, n_mc=16)
    assert ratio == pytest.approx(math.exp(4 * kappa(4) * lam * t), rel=1e-3)


def test_capture_time_fraction_monotone(torus3):
    f, cf = torus3
    frac, se, info = capture_time_fraction(f, [0.0, 0.02, 0.05], n_points=2000, compiled=cf)
    assert frac[0] == 1.0
    assert np.all(np.diff(frac) <= 0)
    assert np.all(se >= 0) and info["n"] > 1900
