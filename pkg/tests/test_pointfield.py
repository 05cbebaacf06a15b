import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravalloc._validation import ParameterError
from gravalloc.pointfield import (
    Annulus,
    Ball,
    Box,
    Complement,
    Cylinder,
    CylinderSurface,
    DomainSpec,
    Intersection,
    ShiftedCylinder,
    StarField,
    UnsupportedRegionError,
    kappa,
    poisson_bounds,
    poisson_exact,
    read_jsonl,
    region_volume,
    rng_for,
    sample_poisson,
    sphere_area,
    volume_estimate,
)


def test_kappa_values():
    assert kappa(2) == pytest.approx(math.pi)
    assert kappa(3) == pytest.approx(4 * math.pi / 3)
    assert 3 * kappa(3) == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("d", [2, 3, 4, 5, 6])
def test_sphere_area_is_d_times_ball_volume(d):
    assert sphere_area(d - 1) == pytest.approx(d * kappa(d))


def test_domain_validation():
    with pytest.raises(ParameterError):
        DomainSpec(1)
    with pytest.raises(ParameterError):
        DomainSpec(3, "torus", 2.0, centered=False)
    with pytest.raises(ParameterError):
        DomainSpec(3, "sphere")


def test_sampling_is_deterministic_and_seed_dependent():
    dom = DomainSpec(3, "torus", 5.0)
    a = sample_poisson(dom, 1.0, 7)
    b = sample_poisson(dom, 1.0, 7)
    c = sample_poisson(dom, 1.0, 8)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points) or len(a) == 0
    assert np.all(dom.contains(a.points))


def test_sample_count_mean():
    dom = DomainSpec(3, "box", 4.0)
    counts = [len(sample_poisson(dom, 0.5, 3, replica=r)) for r in range(400)]
    # mean 32, standard error 32^0.5 / 20
    assert abs(np.mean(counts) - 32) < 5 * math.sqrt(32) / 20


def test_star_field_rejects_points_outside():
    dom = DomainSpec(3, "box", 2.0)
    with pytest.raises(ParameterError):
        StarField(np.array([[0.0, 0.0, 1.5]]), 1.0, dom)


def test_jsonl_round_trip(tmp_path):
    dom = DomainSpec(3, "torus", 3.0)
    f = sample_poisson(dom, 1.0, 1)
    path = tmp_path / "stars.jsonl"
    f.to_jsonl(path)
    g = read_jsonl(path)
    assert np.array_equal(f.points, g.points)
    assert g.domain == dom and g.seed == 1


def test_rng_streams_independent_of_order():
    a = rng_for(5, 3, "x").random(4)
    rng_for(5, 2, "x").random(10)
    b = rng_for(5, 3, "x").random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rng_for(5, 3, "y").random(4))


def test_wrap_maps_into_cell():
    dom = DomainSpec(3, "torus", 2.0)
    p = dom.wrap(np.array([[1.5, -3.2, 0.1]]))
    assert np.all(dom.contains(p))
    assert p[0] == pytest.approx([-0.5, 0.8, 0.1])


@pytest.mark.parametrize(
    "region, volume",
    [
        (Box(2.0, 1.0, 3), 2 * 2.0 * (2 * 1.0) ** 2),
        (Cylinder(2.0, 1.0, 3), 2 * 2.0 * math.pi),
        (Ball((0.0, 0.0, 0.0), 2.0), 4 / 3 * math.pi * 8),
        (Annulus((0.0, 0.0, 0.0), 1.0, 2.0), 4 / 3 * math.pi * 7),
    ],
)
def test_exact_volumes(region, volume):
    assert region_volume(region) == pytest.approx(volume)


def test_difference_volume_and_sobol_fallback():
    outer = Ball((0.0, 0.0, 0.0), 3.0)
    inner = Ball((0.0, 0.0, 0.0), 1.0)
    diff = Intersection((outer, Complement(inner)))
    assert region_volume(diff) == pytest.approx(kappa(3) * 26)
    # a lens has no closed form here; the estimate must agree with the exact lens volume
    lens = Intersection((Ball((0.0, 0.0, 0.0), 1.0), Ball((1.0, 0.0, 0.0), 1.0)))
    value, err = volume_estimate(lens, n=2**15)
    exact = 5 * math.pi / 12
    assert abs(value - exact) < 5 * err + 1e-3


def test_unbounded_volume_rejected():
    with pytest.raises(UnsupportedRegionError):
        region_volume(Complement(Ball((0.0, 0.0, 0.0), 1.0)))


def test_complement_closure_contains_boundary():
    b = Ball((0.0, 0.0, 0.0), 1.0)
    p = np.array([[1.0, 0.0, 0.0]])
    assert b.contains(p)[0] and Complement(b).contains(p)[0]


def test_shifted_cylinder_offset():
    c = ShiftedCylinder(1.0, 0.5, 3, shift=(10.0, 0.0, 0.0))
    assert c.contains(np.array([[10.5, 0.1, 0.0]]))[0]
    assert not c.contains(np.array([[0.0, 0.0, 0.0]]))[0]


def test_cylinder_surface_samples_on_surface():
    s = CylinderSurface(2.0, 0.7, 4)
    pts = s.sample(500, np.random.default_rng(0))
    assert np.allclose(np.linalg.norm(pts[:, 1:], axis=1), 0.7)
    assert np.all(np.abs(pts[:, 0]) <= 2.0)
    assert s.curved_area == pytest.approx(2 * 2.0 * 4 * math.pi * 0.49)


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0.2, 80.0), factor=st.floats(2.0, 6.0))
def test_poisson_upper_tail_bound_holds(lam, factor):
    t = factor * lam
    assert poisson_exact(lam, t, "upper-i") <= poisson_bounds(lam, t, "upper-i") + 1e-15


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0.5, 150.0), frac=st.floats(0.0, 1.0))
def test_poisson_concentration_bound_holds(lam, frac):
    t = frac * lam
    assert poisson_exact(lam, t, "concentration-ii") <= poisson_bounds(lam, t, "concentration-ii") + 1e-15


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0.05, 150.0), extra=st.integers(0, 40))
def test_poisson_point_mass_lower_bound_holds(lam, extra):
    n = math.ceil(lam) + extra
    assert poisson_exact(lam, n, "pointmass-iii") >= poisson_bounds(lam, n, "pointmass-iii")


def test_poisson_bounds_preconditions():
    with pytest.raises(ParameterError):
        poisson_bounds(1.0, 1.0, "upper-i")
    with pytest.raises(ParameterError):
        poisson_bounds(1.0, 2.0, "concentration-ii")
    with pytest.raises(ParameterError):
        poisson_bounds(3.0, 2, "pointmass-iii")
