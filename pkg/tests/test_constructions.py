import json
import math

import numpy as np
import pytest
from scipy import integrate

from gravalloc._validation import ParameterError
from gravalloc.constructions import (
    GalaxyConfig,
    WormholeConfig,
    build_galaxy,
    build_wormhole,
    continuous_wormhole_force,
    cylinder_probes,
    equilibrium_check,
    force_condition_report,
    galaxy_eta,
    radial_component,
    sphere_rule,
    tube_force,
    verify_E1,
)
from gravalloc.pointfield import Cylinder, kappa, sphere_area


@pytest.mark.parametrize("m, n", [(1, 4), (2, 8), (3, 16)])
def test_sphere_rule_weights_and_points(m, n):
    pts, w = sphere_rule(m, n)
    assert w.sum() == pytest.approx(sphere_area(m), rel=1e-12)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
    # second moments of the uniform sphere measure
    second = (w[:, None] * pts**2).sum(axis=0) / w.sum()
    assert np.allclose(second, 1.0 / (m + 1), atol=1e-12)


def test_tube_force_matches_direct_quadrature_d3():
    W, lo, hi, slope, icpt = 0.7, -1.0, 2.0, 0.3, 1.2
    x = np.array([0.4, 0.2, -0.1])

    def comp(i):
        def f(phi, t):
            z = np.array([t, W * math.cos(phi), W * math.sin(phi)]) - x
            return (icpt + slope * t) * W * z[i] / np.linalg.norm(z) ** 3
        return integrate.dblquad(f, lo, hi, 0, 2 * math.pi, epsabs=1e-11)[0]

    want = np.array([comp(i) for i in range(3)])
    got = tube_force(x, W, 3, lo, hi, slope, icpt, n=24)[0]
    assert np.allclose(got, want, rtol=1e-8, atol=1e-10)


def test_tube_force_on_axis_has_no_transverse_part():
    f = tube_force(np.array([[0.3, 0.0, 0.0, 0.0]]), 0.5, 4, -2.0, 2.0, n=16)[0]
    assert np.allclose(f[1:], 0.0, atol=1e-12)


@pytest.mark.parametrize("d", [3, 4])
def test_equilibrium_measure_force_vanishes_inside(d):
    rng = np.random.default_rng(d)
    for _ in range(5):
        x = np.concatenate([[rng.uniform(-5, 5)], rng.uniform(-0.4, 0.4, d - 1)])
        rep = equilibrium_check(1.0, x, d)
        assert rep.ok
        assert rep.residual <= 1e-3 * rep.scale


def test_equilibrium_rejects_probe_near_surface():
    with pytest.raises(ParameterError):
        equilibrium_check(1.0, np.array([0.0, 0.99, 0.0]), 3)


def test_galaxy_eta_gives_integer_volume():
    for d in (3, 4):
        for R in (25.0, 50.0):
            eta, count = galaxy_eta(R, d)
            assert 0.5 < eta < 1
            vol = 2 * R * kappa(d - 1) * (eta * R) ** (d - 1)
            assert vol == pytest.approx(count, rel=1e-12)


def test_galaxy_construction_counts_and_geometry():
    cfg = GalaxyConfig(R=25.0, k=100, dim=3)
    g = build_galaxy(cfg, seed=1)
    assert len(g.surplus) == 100
    assert len(g.background) == g.volume
    assert np.all(g.U.contains(g.stars))
    assert not np.any(g.two_v0.contains(g.stars))
    assert json.loads(cfg.to_json())["k"] == 100


def test_galaxy_surplus_pull_scales_like_inverse_square():
    vals = []
    for R in (25.0, 50.0, 100.0):
        g = build_galaxy(GalaxyConfig(R=R, k=1000, dim=3), seed=0, include_background=False)
        inner, _ = cylinder_probes(g.V.L, g.V.W, 3)
        vals.append(g.surplus_force(inner)[:, 0].mean())
    slope = np.polyfit(np.log([25.0, 50.0, 100.0]), np.log(vals), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.1)


def test_galaxy_rejects_excess_surplus():
    with pytest.raises(ParameterError):
        build_galaxy(GalaxyConfig(R=25.0, k=10**6, dim=3))


def test_wormhole_config_scalings():
    cfg = WormholeConfig(R=20.0, gamma=1.0)
    assert cfg.W == pytest.approx(0.5 * 20.0 ** (-0.5 + 0.04))
    assert cfg.beta == pytest.approx(20.0 ** (1.5 - 0.04))
    assert cfg.error_scale() == pytest.approx(cfg.beta * cfg.W**2 / 400)
    with pytest.raises(ParameterError):
        WormholeConfig(R=20.0, eps=0.05)


def test_wormhole_product_mass_matches_measure():
    cfg = WormholeConfig(R=10.0)
    w = build_wormhole(cfg)
    ring = sphere_area(cfg.dim - 2) * cfg.W ** (cfg.dim - 2)
    # density beta (1.5 + x1 / (2R)) integrates to 1.5 beta R over |x1| <= R/2
    assert w.masses.sum() == pytest.approx(cfg.beta * ring * 1.5 * cfg.R, rel=1e-12)
    assert np.allclose(np.linalg.norm(w.exact_points[:, 1:], axis=1), cfg.W)
    assert np.all(np.abs(w.points[:, 0]) <= cfg.R / 2 + cfg.layer)


def test_wormhole_discrete_force_matches_continuous_on_covered_part():
    cfg = WormholeConfig(R=10.0)
    w = build_wormhole(cfg)
    inner, _ = cylinder_probes(w.V.L, w.V.W, cfg.dim)
    G = continuous_wormhole_force(cfg, inner, cover=cfg.R / 2)
    F = w.discrete_force(inner, perturbed=False)
    assert np.max(np.abs(F - G)) <= 1e-3 * np.max(np.abs(G))


def test_wormhole_patch_mode_small():
    cfg = WormholeConfig(R=10.0, mode="patch", k=2)
    w = build_wormhole(cfg, patches=range(3))
    assert w.worst_certified <= cfg.delta
    assert w.size == 3 * w.stats["n"]


def test_wormhole_perturbation_sensitivity():
    base = WormholeConfig(R=10.0)
    x = np.array([[0.5, 0.01, 0.0, 0.0]])
    f0 = build_wormhole(base).discrete_force(x, perturbed=False)
    small = build_wormhole(WormholeConfig(R=10.0, rho=1e-6), seed=3).discrete_force(x)
    assert np.linalg.norm(small - f0) <= 1e-4 * np.linalg.norm(f0)


def test_wormhole_jsonl(tmp_path):
    w = build_wormhole(WormholeConfig(R=10.0))
    path = tmp_path / "w.jsonl"
    w.write_jsonl(path)
    lines = path.read_text().splitlines()
    assert json.loads(lines[0])["count"] == w.size == len(lines) - 1


def test_continuous_force_rejects_surface_probe():
    cfg = WormholeConfig(R=10.0)
    with pytest.raises(ParameterError):
        continuous_wormhole_force(cfg, np.array([0.0, cfg.W, 0.0, 0.0]))


def test_radial_component():
    x = np.array([[0.0, 3.0, 4.0], [1.0, 0.0, 0.0]])
    F = np.array([[9.0, 3.0, 4.0], [1.0, 1.0, 1.0]])
    assert np.allclose(radial_component(x, F), [5.0, 0.0])


def test_force_condition_report_and_verify():
    rep = force_condition_report([1.0, 2.0], [0.1], R=1.0, gamma=1.0, xi=20)
    assert rep.verdict and rep.xi_min == 2.0
    assert not force_condition_report([-1.0, 2.0], [0.1], 1.0, 1.0).verdict
    assert json.loads(force_condition_report([-1.0], [0.1], 1.0, 1.0).to_json())["xi_min"] is None

    def outward(p):
        f = p.copy()
        f[:, 0] = 1.0
        return f

    assert verify_E1(outward, Cylinder(2.0, 0.5, 3), gamma=1.0).verdict
