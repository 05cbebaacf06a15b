import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravalloc._validation import ParameterError
from gravalloc.cubature.boxes import _log2_ceil, farthest_distance, partition_dominated_boxes
from gravalloc.cubature.cylinder import (
    box_area,
    build_cubature,
    certify,
    nu_measure,
    partition_cylinder,
    sphere_embed,
    sphere_embed_jacobian,
    sphere_partition,
)
from gravalloc.cubature.density import empirical_density_check, sample_moment_sums, uniform_cube_moments
from gravalloc.cubature.moments import m0, moment_map, moment_matrix, multi_indices, polydim
from gravalloc.cubature.taylor import (
    QuadratureLaw,
    TaylorRangeError,
    UniformBallLaw,
    check_force_approx_event,
    fit_c20,
    taylor_coefficients,
    taylor_eval,
    taylor_model,
    taylor_remainder_bound,
)
from gravalloc.pointfield import sphere_area


# moments


@settings(max_examples=40, deadline=None)
@given(d=st.integers(1, 6), k=st.integers(1, 6))
def test_polydim_counts_multi_indices(d, k):
    a = multi_indices(d, k)
    assert len(a) == polydim(k, d)
    assert np.all(a.sum(axis=1) >= 1) and np.all(a.sum(axis=1) <= k)
    assert len({tuple(r) for r in a}) == len(a)


def test_moment_map_order():
    v = moment_map(np.array([2.0, 3.0]), 2)
    assert np.array_equal(np.asarray(v), [2.0, 3.0, 4.0, 6.0, 9.0])
    assert len(v) == polydim(2, 2)
    assert np.allclose(moment_matrix([[2.0, 3.0]], 2)[0], np.asarray(v))


@settings(max_examples=40, deadline=None)
@given(d=st.integers(1, 6), k=st.integers(1, 8), logd=st.floats(-12, -1))
def test_m0_is_least_solution(d, k, logd):
    delta = 10.0**logd
    rhs = delta / (2 * d * 2**k)

    def ok(m):
        return (k * math.e / (m + 1)) ** (m + 1) <= rhs

    m = m0(d, k, delta)
    assert ok(m)
    assert m == 1 or not ok(m - 1)


# Taylor expansion


def test_taylor_coefficients_match_finite_differences():
    y = np.array([1.2, -0.4, 0.7])
    alphas, coef = taylor_coefficients(y, 2)
    coef = coef[0]
    g = lambda x: x / np.linalg.norm(x) ** 3  # noqa: E731
    h = 1e-4
    for a, c in zip(alphas, coef):
        if a.sum() == 1:
            e = a.astype(float) * h
            fd = (g(y + e) - g(y - e)) / (2 * h)
            assert np.allclose(c, fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("d", [3, 4])
def test_taylor_eval_within_remainder_bound(d):
    rng = np.random.default_rng(d)
    y = rng.standard_normal(d)
    for k in range(5):
        model = taylor_model(y, k)
        w = rng.standard_normal((50, d))
        w *= (model.radius * rng.uniform(0, 1, 50) / np.linalg.norm(w, axis=1))[:, None]
        z = y + w
        err = np.linalg.norm(z / np.linalg.norm(z, axis=1)[:, None] ** d - taylor_eval(model, z), axis=1)
        assert np.all(err <= taylor_remainder_bound(model, z))
        assert np.all(np.abs(model.coefficients).max(axis=1) <= model.coefficient_bound() + 1e-300)


def test_taylor_range_checked():
    model = taylor_model(np.array([1.0, 0.0, 0.0]), 2)
    with pytest.raises(TaylorRangeError):
        taylor_eval(model, np.array([1.0 + 2 * model.radius, 0.0, 0.0]))
    with pytest.raises(ParameterError):
        taylor_model(np.zeros(3), 2)


def test_fitted_constant_ordered_by_dimension():
    vals = [fit_c20(d) for d in (3, 4, 5)]
    assert all(v > 1 for v in vals)
    assert vals == sorted(vals)


def test_uniform_ball_moments_against_sampling():
    law = UniformBallLaw(np.array([0.3, -0.2, 0.1]), 0.5)
    alphas = multi_indices(3, 3)
    y = np.array([0.1, 0.1, 0.0])
    pts = law.sample(400_000, np.random.default_rng(0))
    mc = moment_matrix(pts - y, 3).mean(axis=0)
    assert np.allclose(law.moments(alphas, y), mc, atol=3e-3)


def test_quadrature_law_matches_ball_law_far_away():
    rng = np.random.default_rng(1)
    ball = UniformBallLaw(np.zeros(3), 0.4)
    nodes = ball.sample(200_000, rng)
    quad = QuadratureLaw(nodes, np.ones(len(nodes)), np.zeros(3))
    x = np.array([[3.0, 0.0, 0.0]])
    assert np.allclose(quad.mean_kernel(x), ball.mean_kernel(x), atol=1e-4)


def test_force_event_implication():
    rng = np.random.default_rng(2)
    law = UniformBallLaw(np.zeros(3), 0.05)
    Y = law.sample(20, rng)
    rep = check_force_approx_event(Y, np.zeros(3), r=3.0, t=0.5, k=2, law=law)
    assert rep.status == "ok"
    assert rep.implication_holds


# sphere partition and cylinder measure


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 3), n=st.integers(1, 60))
def test_sphere_partition_equal_area(m, n):
    boxes = sphere_partition(m, n)
    assert len(boxes) == n
    areas = np.array([box_area(b) for b in boxes])
    assert areas.sum() == pytest.approx(sphere_area(m), rel=1e-10)
    assert np.allclose(areas, sphere_area(m) / n, rtol=1e-8)


def test_sphere_embed_unit_norm_and_jacobian():
    rng = np.random.default_rng(3)
    ang = np.column_stack([rng.uniform(0, math.pi, 10), rng.uniform(0, math.pi, 10), rng.uniform(0, 2 * math.pi, 10)])
    assert np.allclose(np.linalg.norm(sphere_embed(ang), axis=1), 1.0)
    jac = sphere_embed_jacobian(ang)
    h = 1e-6
    for ell in range(3):
        e = np.zeros(3)
        e[ell] = h
        fd = (sphere_embed(ang + e) - sphere_embed(ang - e)) / (2 * h)
        assert np.allclose(jac[:, :, ell], fd, atol=1e-8)


def test_nu_measure_cumulative_inverse():
    mu = nu_measure(3.0, 0.5, beta=2.0, dim=4)
    x = np.linspace(-3, 3, 13)
    assert np.allclose(mu.inverse_cumulative(mu.cumulative(x)), x)
    # density rises from beta to 2 beta, so the total is 1.5 beta times the plain area
    assert mu.total == pytest.approx(1.5 * 2.0 * mu.plain_area())


@pytest.mark.parametrize("d", [3, 4])
def test_partition_cylinder_equal_mass(d):
    dec = partition_cylinder(2.0, 1.0, 0.4, d)
    masses = np.array([p.mass for p in dec.patches])
    assert dec.constants["mass_spread"] <= 1e-10
    assert masses.sum() == pytest.approx(dec.measure.total, rel=1e-12)
    assert np.allclose(masses, dec.tau_eff ** (d - 1), rtol=1e-10)


def test_partition_cylinder_rejects_large_tau():
    with pytest.raises(ParameterError):
        partition_cylinder(2.0, 1.0, 1.5, 3)


def test_cubature_certified_and_reverified():
    dec = partition_cylinder(2.0, 1.0, 0.5, 3)
    rule = build_cubature(dec, 2, 1e-10, patches=[0, 5])
    assert rule.worst_error <= 1e-10
    for r in rule.rules:
        # a denser quadrature of the patch moments is the independent oracle
        err, _ = certify(r.points, dec.patches[r.patch_id], dec.measure, 2, order=24)
        assert err <= 1e-10
        pts = r.points
        assert np.allclose(np.linalg.norm(pts[:, 1:], axis=1), 1.0)
    assert '"certified_error"' in rule.to_json()


# dominated boxes


@pytest.mark.parametrize("x, p", [(1.0, 0), (2.0, 1), (3.0, 2), (4.0, 2), (1024.0, 10), (1025.0, 11)])
def test_log2_ceil(x, p):
    assert _log2_ceil(x) == p


def test_small_partition_tiles_exactly():
    part = partition_dominated_boxes(2**6, 0.02, 3)
    assert part.check_tiling()["exact"]
    assert np.all(part.sides >= 1)


def test_farthest_distance():
    assert farthest_distance([1.0, 0.0], [2.0, 1.0])[0] == pytest.approx(math.hypot(3.0, 1.0))


def test_partition_parameter_checks():
    with pytest.raises(ParameterError):
        partition_dominated_boxes(0.5, 0.02)
    with pytest.raises(ParameterError):
        partition_dominated_boxes(2**6, 0.6, 3)


# density


def test_uniform_cube_moments_against_sampling():
    alphas = multi_indices(2, 4)
    X = np.random.default_rng(4).uniform(-1, 1, (400_000, 2))
    assert np.allclose(uniform_cube_moments(alphas), moment_matrix(X, 4).mean(axis=0), atol=5e-3)


def test_moment_sums_are_centred():
    S = sample_moment_sums(50, 2, 1, 4000, np.random.default_rng(5))
    assert np.all(np.abs(S.mean(axis=0)) < 5 * S.std(axis=0) / math.sqrt(4000))


def test_density_check_positive_and_rejects_large_dimension():
    est = empirical_density_check(100, 1, 1, 2000, seed=1)
    assert est.lower > 0 and est.value >= est.lower
    with pytest.raises(ParameterError):
        empirical_density_check(100, 3, 2, 2000)
