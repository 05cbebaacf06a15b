"""Attracting-galaxy and wormhole star configurations and the force conditions they are built to meet.

Geometry: ``Cyl(L, W) = {|x_1| <= L, |x_perp| <= W}``; its curved boundary is
the tube ``{|x_1| < L, |x_perp| = W}``. The radial component of a vector ``F``
at ``x`` is ``F_perp . x_perp / |x_perp|``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._kernels import weighted_sum
from ._validation import ParameterError, check_dim, check_points, check_positive
from .cubature.boxes import _log2_ceil
from .cubature.cylinder import (
    build_cubature,
    partition_cylinder,
    sphere_embed,
)
from .force import ForceVector, ToleranceError, _signed_line_integral, background_force, empty_box_expected_force
from .pointfield import Box, Cylinder, ShiftedCylinder, kappa, sphere_area

__all__ = [
    "GalaxyConfig",
    "GalaxyConstruction",
    "build_galaxy",
    "galaxy_eta",
    "WormholeConfig",
    "WormholeConstruction",
    "build_wormhole",
    "continuous_wormhole_force",
    "tube_force",
    "sphere_rule",
    "EquilibriumReport",
    "equilibrium_check",
    "ForceConditionReport",
    "verify_E1",
    "force_condition_report",
    "radial_component",
    "cylinder_probes",
]


def radial_component(x, F):
    """``F_perp . x_perp / |x_perp|`` per row (0 on the axis)."""
    x = np.atleast_2d(x)
    F = np.atleast_2d(F)
    r = np.linalg.norm(x[:, 1:], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.einsum("ij,ij->i", F[:, 1:], x[:, 1:]) / r
    return np.where(r > 0, out, 0.0)


def _kernel_sum(points, masses, probes):
    probes = np.ascontiguousarray(np.atleast_2d(probes), dtype=float)
    if len(points) == 0:
        return np.zeros_like(probes)
    return weighted_sum(np.ascontiguousarray(points, dtype=float), np.ascontiguousarray(masses, dtype=float),
                        probes)


def _central_boxes(R, eps, d):
    p1 = _log2_ceil(R)
    p2 = _log2_ceil(R ** eps)
    v0 = Box(2.0**p1, 2.0 ** (2 * p2), d)
    return p1, p2, v0, v0.scaled(2.0)


# --------------------------------------------------------------------------
# sphere rules and tube integrals


def sphere_rule(m, n):
    """Product rule on the unit sphere ``S^m``: Gauss in each polar angle, trapezoid in the azimuth.

    Returns unit points ``(N, m+1)`` and weights approximating the area measure of
    ``S^m``. The azimuthal part is exact for trigonometric polynomials of degree
    below ``2n``; the polar parts converge spectrally in ``n``.
    """
    axes, wts = [], []
    x, w = np.polynomial.legendre.leggauss(n)
    for i in range(1, m):
        th = 0.5 * math.pi * (x + 1)
        axes.append(th)
        wts.append(0.5 * math.pi * w * np.sin(th) ** (m - i))
    nphi = 2 * n
    axes.append(2 * math.pi * np.arange(nphi) / nphi)
    wts.append(np.full(nphi, 2 * math.pi / nphi))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    weight = wts[0]
    for ww in wts[1:]:
        weight = np.multiply.outer(weight, ww)
    return sphere_embed(grid), weight.ravel()


def _axial_moments(lo, hi, q, d):
    """``int s^j (s^2 + q^2)^(-d/2) ds`` over ``[lo, hi]`` for ``j = 0, 1, 2``."""
    J_d = _signed_line_integral(lo, hi, q, d / 2.0)
    J_m = _signed_line_integral(lo, hi, q, (d - 2) / 2.0)
    if d == 2:
        I1 = 0.5 * (np.log(hi * hi + q * q) - np.log(lo * lo + q * q))
    else:
        I1 = ((hi * hi + q * q) ** (1 - d / 2.0) - (lo * lo + q * q) ** (1 - d / 2.0)) / (2 - d)
    return J_d, I1, J_m - q * q * J_d


def tube_force(x, W, d, lo, hi, slope=0.0, intercept=1.0, n=24):
    """``int g(z - x) v(z_1) dsigma(z)`` over ``{lo <= z_1 <= hi, |z_perp| = W}`` with ``v(t) = intercept + slope t``.

    The axial integral is closed form; the transverse sphere uses :func:`sphere_rule`.
    ``x`` may be one point or rows of points; probes must stay off the surface.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = d - 2
    omega, w = sphere_rule(m, n)
    zt = W * omega
    out = np.zeros_like(x)
    for i, xi in enumerate(x):
        a = zt - xi[1:]
        q = np.linalg.norm(a, axis=1)
        s_lo, s_hi = lo - xi[0], hi - xi[0]
        J, I1, I2 = _axial_moments(np.full_like(q, s_lo), np.full_like(q, s_hi), q, d)
        A = intercept + slope * xi[0]
        out[i, 0] = w @ (A * I1 + slope * I2)
        out[i, 1:] = (w * (A * J + slope * I1)) @ a
    return out * W**m


def _checked_tube_force(x, W, d, lo, hi, slope, intercept, n, rtol, scale=None):
    fine = tube_force(x, W, d, lo, hi, slope, intercept, n)
    coarse = tube_force(x, W, d, lo, hi, slope, intercept, n - max(4, n // 4))
    err = float(np.max(np.abs(fine - coarse)))
    if scale is None:
        scale = float(np.max(np.abs(fine)))
    if err > rtol * max(scale, 1e-300):
        raise ToleranceError(f"tube quadrature changed by {err:.3g} between resolutions", achieved=err)
    return fine, err


# --------------------------------------------------------------------------
# attracting galaxy


def galaxy_eta(R, d):
    """Largest ``eta < 1`` making ``Vol(Cyl(R, eta R))`` an integer (closed form of the bisection)."""
    unit = 2 * R * kappa(d - 1) * R ** (d - 1)
    count = math.ceil(unit) - 1
    eta = (count / unit) ** (1.0 / (d - 1))
    return eta, count


@dataclass(frozen=True)
class GalaxyConfig:
    R: float
    gamma: float = 0.5
    dim: int = 3
    M: float = 0.5
    k: int | None = None
    eps: float = 0.03

    def __post_init__(self):
        check_dim(self.dim)
        check_positive(self.R, "R")
        check_positive(self.M, "M")
        check_positive(self.gamma, "gamma", allow_zero=True)
        if self.k is not None and (int(self.k) != self.k or self.k < 0):
            raise ParameterError("k must be a nonnegative integer")

    @property
    def surplus(self):
        """``k``, defaulting to ``floor(R^(d - gamma)) / (2M)`` rounded down."""
        if self.k is not None:
            return int(self.k)
        return int(math.floor(self.R ** (self.dim - self.gamma)) / (2 * self.M))

    @property
    def embedded(self):
        """Whether ``2M <= R^(2 eps)``, which places ``V-`` inside ``V0`` with margin."""
        return 2 * self.M <= self.R ** (2 * self.eps)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class GalaxyConstruction:
    config: GalaxyConfig
    eta: float
    volume: int
    U: ShiftedCylinder
    V: Cylinder
    v0: Box
    two_v0: Box
    background: np.ndarray
    surplus: np.ndarray
    seed: int | None = None

    @property
    def stars(self):
        return np.vstack([self.background, self.surplus])

    def surplus_force(self, x):
        """Force of the surplus points alone."""
        return _kernel_sum(self.surplus, np.ones(len(self.surplus)), x)

    def cylinder_force(self, x):
        """Stars in ``U`` minus the uniform background of ``U``."""
        x = np.atleast_2d(x)
        pts = self.stars
        out = _kernel_sum(pts, np.ones(len(pts)), x)
        for i, xi in enumerate(x):
            out[i] -= background_force(self.U, xi)[0]
        return out

    def empty_box_force(self, x):
        """Expected force inside the star-free box ``2 V0``."""
        x = np.atleast_2d(x)
        return np.array([empty_box_expected_force(self.two_v0, xi).components for xi in x])

    def force(self, x):
        """Force with only the construction's stars and background (no outside noise)."""
        return self.empty_box_force(x) + self.cylinder_force(x)


def _uniform_in_cylinder(n, L, W, d, shift, rng):
    t = rng.uniform(-L, L, n)
    u = rng.standard_normal((n, d - 1))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rad = W * rng.uniform(0, 1, n) ** (1.0 / (d - 1))
    return np.column_stack([t, u * rad[:, None]]) + shift


def build_galaxy(cfg, seed=0, include_background=True):
    """Stars of the galaxy construction: ``Vol(U)`` uniform points plus ``k`` surplus points in ``U``.

    ``2 V0`` is left empty. The surplus is returned separately so that its force
    can be evaluated alone.

    Raises
    ------
    ParameterError
        ``k >= R^d / M`` or ``eta`` outside ``(0.5, 1)``.
    """
    d, R = cfg.dim, float(cfg.R)
    k = cfg.surplus
    if not k < R**d / cfg.M:
        raise ParameterError(f"k = {k} must be below R^d / M = {R**d / cfg.M:.6g}")
    eta, vol = galaxy_eta(R, d)
    if not 0.5 < eta < 1:
        raise ParameterError(f"eta = {eta:.4g} outside (0.5, 1); R too small")
    shift = np.zeros(d)
    shift[0] = 10 * R
    U = ShiftedCylinder(R, eta * R, d, shift=tuple(shift))
    _, _, v0, two_v0 = _central_boxes(R, cfg.eps, d)
    rng = np.random.default_rng(seed)
    surplus = _uniform_in_cylinder(k, R, eta * R, d, shift, rng)
    n_bg = vol if include_background else 0
    background = _uniform_in_cylinder(n_bg, R, eta * R, d, shift, rng)
    return GalaxyConstruction(cfg, eta, vol, U, Cylinder(R, cfg.M, d), v0, two_v0, background, surplus, seed)


# --------------------------------------------------------------------------
# wormhole


@dataclass(frozen=True)
class WormholeConfig:
    """Tube ``U = Cyl(R, W)`` whose curved boundary carries ``nu = beta * nu_(R,W)``.

    ``W = lam R^(-(2-gamma)/(d-2) + 2 eps)`` and ``beta = R^((2-gamma)(d-1)/(d-2) - 2 eps)``.
    """

    R: float
    gamma: float = 1.0
    dim: int = 4
    eps: float = 0.02
    lam: float = 0.5
    mode: str = "product"
    k: int = 3
    n1: int | None = None
    delta: float = 1e-9
    band_width: float = 0.5
    axial_nodes: int = 6
    sphere_nodes: int = 16
    rho: float | None = None

    def __post_init__(self):
        d = check_dim(self.dim, minimum=4)
        check_positive(self.R, "R")
        if not 0 <= self.gamma < 2:
            raise ParameterError("gamma must lie in [0, 2)")
        if not 0 < self.lam < 1:
            raise ParameterError("lam must lie in (0, 1)")
        if not 0 < self.eps < 1.0 / (10 * d):
            raise ParameterError(f"eps must lie in (0, 1/(10 d)) = (0, {1 / (10 * d):.4g})")
        if self.mode not in ("patch", "product"):
            raise ParameterError("mode must be 'patch' or 'product'")

    @property
    def W(self):
        d = self.dim
        return self.lam * self.R ** (-(2 - self.gamma) / (d - 2) + 2 * self.eps)

    @property
    def beta(self):
        d = self.dim
        return self.R ** ((2 - self.gamma) * (d - 1) / (d - 2) - 2 * self.eps)

    @property
    def layer(self):
        """Perturbation radius, ``R^(-3d)`` unless overridden."""
        return self.R ** (-3 * self.dim) if self.rho is None else float(self.rho)

    @property
    def tau(self):
        """Patch scale ``eta W R^(-eps)`` with ``eta = 3/4``."""
        return 0.75 * self.W * self.R ** (-self.eps)

    @property
    def density_slope(self):
        """``nu`` has density ``beta (intercept + slope x_1)`` on the tube."""
        return 1.0 / (2 * self.R)

    @property
    def density_intercept(self):
        return 1.5

    def error_scale(self):
        """``beta W^(d-2) R^(-(d-2))``."""
        d = self.dim
        return self.beta * self.W ** (d - 2) * self.R ** (-(d - 2))

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class WormholeConstruction:
    """Weighted point set approximating ``nu`` on the middle half ``|x_1| <= R/2`` of the tube."""

    config: WormholeConfig
    points: np.ndarray
    masses: np.ndarray
    exact_points: np.ndarray
    patch_ids: np.ndarray
    decomposition: object = None
    worst_certified: float | None = None
    stats: dict = field(default_factory=dict)

    @property
    def size(self):
        """``|A|``."""
        return len(self.points)

    @property
    def U(self):
        return Cylinder(self.config.R, self.config.W, self.config.dim)

    @property
    def V(self):
        """The probe cylinder ``U / 3``."""
        return Cylinder(self.config.R / 3, self.config.W / 3, self.config.dim)

    def discrete_force(self, x, perturbed=True):
        pts = self.points if perturbed else self.exact_points
        return _kernel_sum(pts, self.masses, x)

    def force(self, x):
        """Construction stars plus the expected force of the otherwise empty box ``2 V0``."""
        _, _, _, two_v0 = _central_boxes(self.config.R, self.config.eps, self.config.dim)
        x = np.atleast_2d(x)
        box = np.array([empty_box_expected_force(two_v0, xi).components for xi in x])
        return box + self.discrete_force(x)

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            header = {"record": "header", "schema": 1, "construction": "wormhole",
                      "config": json.loads(self.config.to_json()), "count": self.size}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for p, m in zip(self.points, self.masses):
                fh.write(json.dumps({"x": [float(v) for v in p], "mass": float(m)}) + "\n")


def _perturb(points, rho, rng):
    if rho <= 0 or len(points) == 0:
        return points.copy()
    d = points.shape[1]
    u = rng.standard_normal(points.shape)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return points + u * (rho * rng.uniform(0, 1, len(points)) ** (1.0 / d))[:, None]


def _product_points(cfg):
    d, W, R = cfg.dim, cfg.W, cfg.R
    cover = R / 2
    nb = max(1, int(math.ceil(2 * cover / (cfg.band_width * W))))
    edges = np.linspace(-cover, cover, nb + 1)
    x, w = np.polynomial.legendre.leggauss(cfg.axial_nodes)
    half = 0.5 * np.diff(edges)
    t = (edges[:-1, None] + half[:, None] * (x[None, :] + 1)).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    wt = wt * cfg.beta * (cfg.density_intercept + cfg.density_slope * t)
    omega, ws = sphere_rule(d - 2, cfg.sphere_nodes)
    pts = np.empty((len(t) * len(omega), d))
    pts[:, 0] = np.repeat(t, len(omega))
    pts[:, 1:] = np.tile(W * omega, (len(t), 1))
    masses = np.outer(wt, ws * W ** (d - 2)).ravel()
    ids = np.repeat(np.arange(nb), cfg.axial_nodes * len(omega))
    return pts, masses, ids, {"bands": nb, "per_band": cfg.axial_nodes * len(omega)}


def build_wormhole(cfg, seed=0, patches=None):
    """Weighted points on the tube whose force approximates that of ``nu`` inside ``U / 3``.

    ``mode="patch"`` partitions ``|x_1| <= R/2`` into equal-mass patches of scale
    ``tau`` and fits ``n1^(d-1)`` moment-matched points per patch, each carrying
    the patch mass divided by the point count. ``mode="product"`` uses a tensor
    rule (Gauss nodes in axial bands of width ``band_width * W`` times a sphere
    rule). Points are then moved by at most ``layer`` in random directions.

    Raises
    ------
    CertificationError
        A patch fit misses ``delta``; carries the patch id.
    """
    rng = np.random.default_rng(seed)
    d, R, W = cfg.dim, cfg.R, cfg.W
    _, p2, v0, _ = _central_boxes(R, cfg.eps, d)
    stats = {"W": W, "beta": cfg.beta, "inside_v0": bool(R <= v0.L and W <= v0.W)}
    if cfg.mode == "product":
        pts, masses, ids, extra = _product_points(cfg)
        stats.update(extra)
        decomp, worst = None, None
    else:
        decomp = partition_cylinder(R, W, cfg.tau, d, cfg.beta, cover=R / 2)
        rule = build_cubature(decomp, cfg.k, cfg.delta, n1=cfg.n1, patches=patches)
        pts = np.vstack([r.points for r in rule.rules])
        per = rule.n
        mass = np.repeat([decomp.patches[r.patch_id].mass / per for r in rule.rules], per)
        masses = mass
        ids = np.repeat([r.patch_id for r in rule.rules], per)
        worst = rule.worst_error
        stats.update({"K": decomp.K, "n": per, "tau_eff": decomp.tau_eff, "constants": decomp.constants,
                      "unit_mass_points_per_patch": decomp.patches[0].mass})
    stats["mass"] = float(masses.sum())
    return WormholeConstruction(cfg, _perturb(pts, cfg.layer, rng), masses, pts, ids, decomp, worst, stats)


def continuous_wormhole_force(cfg, x, n=32, rtol=1e-8, cover=None):
    """``G(x) = int g(z - x) dnu(z)`` over the tube (or its part ``|z_1| <= cover``).

    Returns a :class:`ForceVector` for one point, or an ``(N, d)`` array for rows.

    Raises
    ------
    ToleranceError
        The sphere rule has not converged to ``rtol``.
    """
    single = np.ndim(x) == 1
    x = check_points(x, cfg.dim, "x")
    L = cfg.R if cover is None else float(cover)
    W = cfg.W
    r = np.linalg.norm(x[:, 1:], axis=1)
    if np.any(np.abs(r - W) < 1e-3 * W):
        raise ParameterError("probe too close to the tube surface")
    vals, err = _checked_tube_force(x, W, cfg.dim, -L, L, cfg.beta * cfg.density_slope,
                                    cfg.beta * cfg.density_intercept, n, rtol)
    if single:
        return ForceVector(vals[0], x[0], error=err)
    return vals


# --------------------------------------------------------------------------
# the surface of an infinite cylinder


@dataclass(frozen=True)
class EquilibriumReport:
    force: np.ndarray
    tail_bound: float
    scale: float
    residual: float
    budget: float

    @property
    def ok(self):
        return self.residual <= self.budget


def equilibrium_check(M, x, dim=3, T=None, rtol=1e-3, n=None):
    """Force of the unit surface measure of the infinite cylinder ``{|x_perp| = M}`` at an interior ``x``.

    The surface is truncated to ``|z_1 - x_1| <= T`` (symmetric about ``x``, so the
    axial component cancels); the dropped tails are bounded by
    ``2 |S^(d-2)| M^(d-2) T^(2-d) / (d-2)``. The residual ``|H| + tail`` is compared
    with ``rtol`` times the absolute scale ``int |g(z - x)| dsigma``.

    Raises
    ------
    ParameterError
        ``x`` within ``0.02 M`` of the surface.
    """
    d = check_dim(dim)
    M = check_positive(M, "M")
    x = np.asarray(x, dtype=float)
    rad = float(np.linalg.norm(x[1:]))
    if rad > 0.98 * M:
        raise ParameterError("probe too close to the cylinder surface")
    T = 1e4 * M if T is None else check_positive(T, "T")
    if n is None:
        n = int(math.ceil(24 / (1 - rad / M)))
    omega, w = sphere_rule(d - 2, n)
    q = np.linalg.norm(M * omega - x[1:], axis=1)
    absint = 2 * _signed_line_integral(np.zeros_like(q), np.full_like(q, T), q, (d - 1) / 2.0)
    scale = float(w @ absint) * M ** (d - 2)
    H, _ = _checked_tube_force(x, M, d, x[0] - T, x[0] + T, 0.0, 1.0, n, 1e-6, scale=scale)
    H = H[0]
    tail = 2 * sphere_area(d - 2) * M ** (d - 2) * T ** (2 - d) / (d - 2)
    residual = float(np.linalg.norm(H)) + tail
    return EquilibriumReport(H, tail, scale, residual, rtol * scale)


# --------------------------------------------------------------------------
# the force condition


def cylinder_probes(L, W, dim, n_axial=9, radii=(0.0, 0.5, 0.95), n_dirs=8, seed=0):
    """Interior probes of ``Cyl(L, W)`` and probes on its curved boundary."""
    rng = np.random.default_rng(seed)
    t = np.linspace(-L, L, n_axial)
    u = rng.standard_normal((n_dirs, dim - 1))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    inner = [np.concatenate([[ti], np.zeros(dim - 1)]) for ti in t if 0.0 in radii]
    for ti in t:
        for r in radii:
            if r > 0:
                inner.extend(np.column_stack([np.full(n_dirs, ti), r * W * u]))
    t_open = t[1:-1] if n_axial > 2 else t
    surface = np.vstack([np.column_stack([np.full(n_dirs, ti), W * u]) for ti in t_open])
    return np.array(inner), surface


@dataclass(frozen=True)
class ForceConditionReport:
    """First and radial force components over probes of ``V`` and its curved boundary."""

    first_min: float
    first_max: float
    radial_min: float
    scale: float
    xi: float
    xi_min: float
    verdict: bool
    n_inner: int
    n_surface: int

    def to_json(self):
        return json.dumps({k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                           for k, v in asdict(self).items()}, sort_keys=True)


def force_condition_report(first, radial, R, gamma, xi=20.0):
    """:class:`ForceConditionReport` from first components at interior probes and radial components on the boundary."""
    first = np.asarray(first, dtype=float)
    radial = np.asarray(radial, dtype=float)
    scale = R ** (1 - gamma)
    fmin, fmax = float(first.min()), float(first.max())
    xi_min = math.inf if fmin <= 0 else max(fmax / scale, scale / fmin)
    verdict = bool(xi >= xi_min and radial.min() > 0)
    return ForceConditionReport(fmin, fmax, float(radial.min()), scale, float(xi), float(xi_min), verdict,
                                len(first), len(radial))


def verify_E1(force, V, gamma, xi=20.0, n_axial=9, radii=(0.0, 0.5, 0.95), n_dirs=8, seed=0):
    """Check ``xi R^(1-gamma) >= F(x)_1 >= R^(1-gamma) / xi`` on ``V`` and ``F(x)_n > 0`` on its curved boundary.

    ``force`` maps an ``(N, d)`` array of points to forces. ``R`` is the half
    length of ``V``. ``xi_min`` is the smallest ``xi`` satisfying the first-component
    sandwich (infinite if some ``F_1 <= 0``); the verdict at ``xi`` also needs the
    radial condition.
    """
    inner, surface = cylinder_probes(V.L, V.W, V.dim, n_axial, radii, n_dirs, seed)
    F = np.asarray(force(np.vstack([inner, surface])))
    return force_condition_report(F[: len(inner), 0], radial_component(surface, F[len(inner):]), float(V.L), gamma, xi)
