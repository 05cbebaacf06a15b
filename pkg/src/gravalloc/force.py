"""Gravitational kernel, restricted and total forces, potentials.

Sign conventions: the force on ``x`` exerted by a set ``A`` is

    F(x|A) = sum_{z in A} g(z - x) - lam * int_A g(z - x) dz,     g(z) = z / |z|^d

and the restricted potential is

    U(x|A) = (1/(d-2)) * [ -sum_{z in A} |z-x|^(2-d) + lam * int_A |z-x|^(2-d) dz ]

so that grad U = -F. ``lam`` is the intensity of the star field.
"""

from __future__ import annotations

import functools
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _kernels
from ._validation import ParameterError, check_positive, check_vector
from .pointfield import (
    Annulus,
    Ball,
    Box,
    Complement,
    Cylinder,
    Intersection,
    UnsupportedRegionError,
    kappa,
    sphere_area,
)

__all__ = [
    "SingularityError",
    "ConvergenceError",
    "ToleranceError",
    "g_kernel",
    "ForceVector",
    "ForcePolicy",
    "PotentialValue",
    "background_force",
    "background_potential",
    "force_restricted",
    "force_total",
    "potential",
    "potential_diff",
    "divergence_probe",
    "boundary_distance",
    "empty_box_expected_force",
    "CompiledField",
    "periodic_field",
    "ball_field",
    "window_field",
]

STAR_GUARD = 1e-6


class SingularityError(ParameterError):
    """Evaluation point coincides with (or is within the guard radius of) a star."""


class ConvergenceError(RuntimeError):
    """A truncated sum did not settle before its cutoff radius.

    ``partial`` holds the last partial result and ``last_increment`` the size
    of the final change between successive partial sums.
    """

    def __init__(self, message, partial=None, last_increment=None):
        super().__init__(message)
        self.partial = partial
        self.last_increment = last_increment


class ToleranceError(RuntimeError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


def g_kernel(z):
    """Return ``z / |z|^d``."""
    z = check_vector(z, name="z")
    r = float(np.linalg.norm(z))
    if r == 0.0:
        raise SingularityError("g is singular at z = 0")
    return z / r ** len(z)


@dataclass(frozen=True)
class ForceVector:
    """A force value at ``position`` with optional convergence metadata."""

    components: np.ndarray
    position: np.ndarray | None = None
    error: float = 0.0
    converged: bool = True
    radius: float | None = None

    @property
    def first(self):
        return float(self.components[0])

    @property
    def radial(self):
        """Component along the transverse direction of ``position``; 0 on the axis."""
        if self.position is None:
            raise ParameterError("radial component needs the evaluation position")
        perp = np.array(self.position, dtype=float)
        perp[0] = 0.0
        n = np.linalg.norm(perp)
        if n == 0.0:
            return 0.0
        return float(self.components @ perp / n)

    @property
    def norm(self):
        return float(np.linalg.norm(self.components))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.components, dtype=dtype)


@dataclass(frozen=True)
class ForcePolicy:
    """Truncation rule for the conditionally convergent force sum.

    ``ordering`` is ``"distance-ordered-annuli"`` (partial sums over balls
    B(x, r0 * growth^k) until two successive sums differ by less than
    ``tol``) or ``"torus-minimum-image"`` (periodic Ewald summation; the
    field must live on a torus).
    """

    ordering: str = "distance-ordered-annuli"
    growth: float = 2.0
    tol: float = 1e-3
    max_radius: float | None = None
    initial_radius: float | None = None

    def __post_init__(self):
        if self.ordering not in ("distance-ordered-annuli", "torus-minimum-image"):
            raise ParameterError(f"unknown ordering {self.ordering!r}")
        check_positive(self.tol, "tol")
        if not float(self.growth) > 1.0:
            raise ParameterError("growth factor must exceed 1")
        if self.max_radius is not None:
            check_positive(self.max_radius, "max_radius")
        if self.initial_radius is not None:
            check_positive(self.initial_radius, "initial_radius")


@dataclass(frozen=True)
class PotentialValue:
    value: float
    kind: str
    dim: int | None = None

    def __post_init__(self):
        if self.kind not in ("stationary", "restricted", "difference"):
            raise ParameterError(f"unknown potential kind {self.kind!r}")
        if self.kind == "stationary" and self.dim is not None and self.dim < 5:
            raise UnsupportedRegionError("stationary potentials exist only for d >= 5")

    def __float__(self):
        return float(self.value)


# --------------------------------------------------------------------------
# one-dimensional building blocks


def _line_integral(a, s, q):
    """``int_0^a (t^2 + s^2)^(-q) dt`` for ``a >= 0``, ``s >= 0`` (vectorized)."""
    a = np.asarray(a, dtype=float)
    s = np.asarray(s, dtype=float)
    a, s = np.broadcast_arrays(a, s)
    out = np.zeros(a.shape)
    ok = a > 0
    if not np.any(ok):
        return out
    aa, ss = a[ok], s[ok]
    with np.errstate(divide="ignore", invalid="ignore"):
        if q == 0.5:
            v = np.arcsinh(aa / ss)
        elif q == 1.0:
            v = np.arctan2(aa, ss) / ss
        elif q == 1.5:
            v = aa / (ss * ss * np.sqrt(aa * aa + ss * ss))
        elif q == 2.0:
            r2 = aa * aa + ss * ss
            v = aa / (2 * ss * ss * r2) + np.arctan2(aa, ss) / (2 * ss**3)
        else:
            v = aa * ss ** (-2 * q) * special.hyp2f1(0.5, q, 1.5, -((aa / ss) ** 2))
    out[ok] = v
    return out


def _signed_line_integral(lo, hi, s, q):
    """``int_lo^hi (t^2 + s^2)^(-q) dt``."""
    return np.sign(hi) * _line_integral(np.abs(hi), s, q) - np.sign(lo) * _line_integral(np.abs(lo), s, q)


def _rect_corner_3d(a, b, c):
    """``int_0^a int_0^b (u^2 + v^2 + c^2)^(-1/2) dv du`` for a, b, c >= 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    r = np.sqrt(a * a + b * b + c * c)
    out = np.zeros(np.broadcast(a, b, c).shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(a > 0, a * np.arcsinh(np.divide(b, np.sqrt(a * a + c * c))), 0.0)
        t2 = np.where(b > 0, b * np.arcsinh(np.divide(a, np.sqrt(b * b + c * c))), 0.0)
        t3 = np.where(c > 0, c * np.arctan(np.divide(a * b, c * r)), 0.0)
    out = out + np.nan_to_num(t1) + np.nan_to_num(t2) - np.nan_to_num(t3)
    return out


@functools.lru_cache(maxsize=64)
def _gl(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _graded_nodes(a, scale, order):
    """Composite Gauss-Legendre nodes on [0, a] refined geometrically toward 0."""
    if a <= 0:
        return np.zeros(0), np.zeros(0)
    scale = max(scale, a * 1e-12)
    edges = [0.0]
    e = min(scale, a)
    edges.append(e)
    while e < a:
        e = min(2 * e, a)
        edges.append(e)
    x, w = _gl(order)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (x + 1))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _rect_corner(a, c, q, order):
    """``int_{[0,a_1] x ... x [0,a_m]} (|u|^2 + c^2)^(-q) du`` for a >= 0."""
    m = len(a)
    if np.any(np.asarray(a) <= 0):
        return 0.0
    if m == 2 and q == 0.5:
        return float(_rect_corner_3d(a[0], a[1], c))
    grids, wts = [], []
    for ai in a[1:]:
        n, w = _graded_nodes(ai, max(c, 1e-300), order)
        grids.append(n)
        wts.append(w)
    mesh = np.meshgrid(*grids, indexing="ij")
    s2 = c * c + sum(g * g for g in mesh)
    w = functools.reduce(np.multiply.outer, wts)
    return float(np.sum(w * _line_integral(a[0], np.sqrt(s2), q)))


def _rect_integral(lo, hi, c, q, order=10):
    """``int_{prod [lo_i, hi_i]} (|u|^2 + c^2)^(-q) du`` by corner decomposition."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    m = len(lo)
    total = 0.0
    for bits in range(1 << m):
        corner = np.where([(bits >> i) & 1 for i in range(m)], hi, lo)
        sgn = 1.0
        for i in range(m):
            s = np.sign(corner[i])
            sgn *= s if (bits >> i) & 1 else -s
        if sgn == 0.0:
            continue
        total += sgn * _rect_corner(np.abs(corner), abs(c), q, order)
    return total


# --------------------------------------------------------------------------
# background integrals (unit density)


def _box_faces(box, x, order):
    """Face integrals of ``|z-x|^(2-d)`` over the 2d faces of ``box``.

    Returns arrays ``minus[j]``, ``plus[j]`` for the faces ``z_j = o_j -+ h_j``.
    """
    d = box.dim
    q = (d - 2) / 2
    y = x - box.origin
    h = box.half_widths
    minus = np.empty(d)
    plus = np.empty(d)
    for j in range(d):
        others = [i for i in range(d) if i != j]
        lo = -h[others] - y[others]
        hi = h[others] - y[others]
        minus[j] = _rect_integral(lo, hi, h[j] + y[j], q, order)
        plus[j] = _rect_integral(lo, hi, h[j] - y[j], q, order)
    return minus, plus, y, h


def _box_force(box, x, order):
    d = box.dim
    minus, plus, _, _ = _box_faces(box, x, order)
    return (minus - plus) / (d - 2)


def _box_potential(box, x, order):
    d = box.dim
    minus, plus, y, h = _box_faces(box, x, order)
    return 0.5 * float(np.sum((h - y) * plus + (h + y) * minus)) / (d - 2)


def _ball_force(center, radius, x):
    d = len(x)
    v = np.asarray(center) - x
    r = np.linalg.norm(v)
    if r <= radius:
        return kappa(d) * v
    return kappa(d) * radius**d * v / r**d


def _ball_potential(center, radius, x):
    d = len(x)
    r2 = float(np.sum((np.asarray(center) - x) ** 2))
    k = kappa(d)
    if r2 <= radius * radius:
        return d * k * radius**2 / (2 * (d - 2)) - k * r2 / 2
    return k * radius**d * r2 ** ((2 - d) / 2) / (d - 2)


def _cyl_parts(cyl, x, nc, nr):
    """Boundary-integral pieces for a cylinder; see ``_cylinder_force``."""
    d = cyl.dim
    q = (d - 2) / 2
    y = x - cyl.offset
    L, W = float(cyl.L), float(cyl.W)
    perp = y[1:]
    s = float(np.linalg.norm(perp))
    e = perp / s if s > 0 else np.zeros(d - 1)
    alpha = (d - 4) / 2
    c, wc = special.roots_jacobi(nc, alpha, alpha)
    sa = sphere_area(d - 3)
    # curved surface
    b = np.sqrt(np.maximum(W * W + s * s - 2 * W * s * c, 0.0))
    T = _signed_line_integral(-L - y[0], L - y[0], b, q)
    curved_e = W ** (d - 2) * sa * np.sum(wc * c * T)
    curved_pot = W ** (d - 2) * sa * np.sum(wc * (W - s * c) * T)
    # caps
    caps = []
    for sign in (1.0, -1.0):
        hgt = abs(sign * L - y[0])
        edges = [0.0, W]
        if 0 < s < W:
            edges = [0.0, s, W]
        nodes, wts = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            # refine toward the radius closest to the projection of x
            n, w = _graded_nodes(hi - lo, max(hgt, 1e-12), nr)
            nodes.append(hi - n if abs(s - hi) < abs(s - lo) else lo + n)
            wts.append(w)
        rho = np.concatenate(nodes)
        wr = np.concatenate(wts)
        R, C = np.meshgrid(rho, c, indexing="ij")
        val = (hgt * hgt + R * R + s * s - 2 * R * s * C) ** (-q)
        I = sa * np.sum(wr[:, None] * wc[None, :] * R ** (d - 2) * val)
        caps.append(I)
    return y, e, curved_e, curved_pot, caps[0], caps[1]


def _cylinder_force(cyl, x, nc=96, nr=12):
    d = cyl.dim
    y, e, curved_e, _, cap_plus, cap_minus = _cyl_parts(cyl, x, nc, nr)
    out = np.zeros(d)
    out[1:] = -curved_e * e
    out[0] = cap_minus - cap_plus
    return out / (d - 2)


def _cylinder_potential(cyl, x, nc=96, nr=12):
    d = cyl.dim
    y, _, _, curved_pot, cap_plus, cap_minus = _cyl_parts(cyl, x, nc, nr)
    L = float(cyl.L)
    total = curved_pot + (L - y[0]) * cap_plus + (L + y[0]) * cap_minus
    return 0.5 * total / (d - 2)


def _split_difference(region):
    if isinstance(region, Annulus):
        outer = Ball(region.center, region.p)
        inner = Ball(region.center, region.q) if region.q > 0 else None
        return outer, inner
    if isinstance(region, Intersection):
        pair = region.as_difference()
        if pair is not None:
            return pair
    return None


def _background(region, x, what, accurate):
    if isinstance(region, Ball):
        if what == "force":
            return _ball_force(region.center, region.radius, x), 0.0
        return _ball_potential(region.center, region.radius, x), 0.0
    if isinstance(region, Box):
        fn = _box_force if what == "force" else _box_potential
        if region.dim == 3:
            return fn(region, x, 10), 0.0
        hi = fn(region, x, 12 if accurate else 10)
        lo = fn(region, x, 8)
        return hi, float(np.max(np.abs(np.asarray(hi) - np.asarray(lo))))
    if isinstance(region, Cylinder):
        fn = _cylinder_force if what == "force" else _cylinder_potential
        hi = fn(region, x, 128, 14)
        lo = fn(region, x, 64, 10)
        return hi, float(np.max(np.abs(np.asarray(hi) - np.asarray(lo))))
    pair = _split_difference(region)
    if pair is not None:
        outer, inner = pair
        a, ea = _background(outer, x, what, accurate)
        if inner is None:
            return a, ea
        b, eb = _background(inner, x, what, accurate)
        return a - b, ea + eb
    raise UnsupportedRegionError(f"no background integral for region kind {region.kind!r}")


def background_force(region, x):
    """``int_A g(z - x) dz`` for unit density, with an error estimate.

    Returns ``(vector, error)``. Balls are exact, boxes in d = 3 are closed
    form and other boxes and cylinders use boundary quadrature.
    """
    x = check_vector(x, region.dim)
    v, err = _background(region, x, "force", True)
    return np.asarray(v, dtype=float), err


def background_potential(region, x):
    """``(1/(d-2)) int_A |z - x|^(2-d) dz`` for unit density; returns ``(value, error)``."""
    x = check_vector(x, region.dim)
    v, err = _background(region, x, "potential", True)
    return float(v), err


# --------------------------------------------------------------------------
# restricted quantities


def _stars_in(field, region):
    pts = field.points
    if len(pts) == 0:
        return pts
    return pts[region.contains(pts)]


def _guard(x, stars):
    if len(stars):
        dmin = float(np.min(np.linalg.norm(stars - x, axis=1)))
        if dmin < STAR_GUARD:
            raise SingularityError(f"evaluation point within {dmin:.3g} of a star")


def _star_sum(x, stars):
    if len(stars) == 0:
        return np.zeros(len(x))
    y = stars - x
    r = np.linalg.norm(y, axis=1)
    return np.sum(y / r[:, None] ** len(x), axis=0)


def _star_potential_sum(x, stars):
    d = len(x)
    if len(stars) == 0:
        return 0.0
    r = np.linalg.norm(stars - x, axis=1)
    return float(-np.sum(r ** (2.0 - d)) / (d - 2))


def force_restricted(x, field, region, tol=1e-3):
    """Force on ``x`` from the stars in ``region`` minus the background over ``region``.

    Complements of bounded regions are handled as total force minus the
    restricted force of the bounded part.

    Raises
    ------
    SingularityError
        If ``x`` is within ``1e-6`` of a star.
    ToleranceError
        If the quadrature error estimate exceeds ``tol / 10``.
    """
    x = check_vector(x, field.dim)
    if isinstance(region, Complement):
        _guard(x, field.points)
        tot = force_total(x, field, ForcePolicy(tol=tol))
        inner = force_restricted(x, field, region.region, tol)
        return ForceVector(tot.components - inner.components, x, tot.error + inner.error, tot.converged)
    if not region.bounded:
        raise UnsupportedRegionError("force_restricted needs a bounded region or a complement")
    stars = _stars_in(field, region)
    _guard(x, stars)
    bg, err = background_force(region, x)
    err *= field.intensity
    if err > tol / 10:
        raise ToleranceError(f"background quadrature error {err:.3g} exceeds {tol / 10:.3g}", achieved=err)
    comp = _star_sum(x, stars) - field.intensity * bg
    return ForceVector(comp, x, err)


def restricted_potential(x, field, region):
    x = check_vector(x, field.dim)
    if not region.bounded:
        raise UnsupportedRegionError("restricted potentials need a bounded region")
    stars = _stars_in(field, region)
    _guard(x, stars)
    bg, err = background_potential(region, x)
    return _star_potential_sum(x, stars) + field.intensity * bg, err * field.intensity


def _domain_cutoff(x, field):
    dom = field.domain
    lo = dom.lower
    return float(min(np.min(x - lo), np.min(lo + dom.side - x)))


def _ordered(x, stars):
    """Distances of ``stars`` from ``x`` in increasing order, ties broken lexicographically."""
    r = np.linalg.norm(stars - x, axis=1)
    keys = [stars[:, i] for i in range(stars.shape[1] - 1, -1, -1)] + [r]
    order = np.lexsort(keys)
    return r[order], stars[order]


def _first_radius(x, field, policy, dists):
    if policy.initial_radius is not None:
        return float(policy.initial_radius)
    d = field.dim
    r0 = (8.0 / (field.intensity * kappa(d))) ** (1.0 / d)
    if len(dists):
        r0 = max(r0, float(dists[0]) * (1 + 1e-9))
    return r0


def force_total(x, field, policy=None):
    """Total force on ``x`` under the truncation rule of ``policy``.

    Raises
    ------
    ConvergenceError
        When the Cauchy rule is not met before ``max_radius`` or the domain
        edge; the exception carries the last partial sum.
    """
    policy = policy or ForcePolicy()
    x = check_vector(x, field.dim)
    _guard(x, field.points)
    if policy.ordering == "torus-minimum-image" or field.domain.mode == "torus":
        if field.domain.mode != "torus":
            raise ParameterError("minimum-image ordering needs a torus domain")
        pf = periodic_field(field, tol=_ewald_tol(policy.tol), grid=False)
        f, _ = pf.evaluate(x[None, :])
        return ForceVector(f[0], x, 0.0, True)
    dists, stars = _ordered(x, field.points)
    cap = _domain_cutoff(x, field)
    if policy.max_radius is not None:
        cap = min(cap, float(policy.max_radius))
    r = min(_first_radius(x, field, policy, dists), cap)
    d = field.dim
    g = (stars - x) / np.maximum(dists, 1e-300)[:, None] ** d if len(stars) else np.zeros((0, d))
    csum = np.vstack([np.zeros(d), np.cumsum(g, axis=0)])
    prev = None
    inc = math.inf
    while True:
        cur = csum[np.searchsorted(dists, r, side="right")]
        if prev is not None:
            inc = float(np.linalg.norm(cur - prev))
            if inc < policy.tol:
                return ForceVector(cur, x, inc, True, r)
        if r >= cap:
            part = ForceVector(cur, x, inc, False, r)
            raise ConvergenceError(
                f"force sum not settled by radius {r:.4g} (last increment {inc:.3g})",
                partial=part,
                last_increment=inc,
            )
        prev = cur
        r = min(r * policy.growth, cap)


def _ewald_tol(tol):
    return float(np.clip(tol / 100, 1e-13, 1e-6))


def potential(x, field, region=None, policy=None):
    """Restricted potential ``U(x|A)`` or, with ``region=None``, the stationary potential (d >= 5)."""
    x = check_vector(x, field.dim)
    d = field.dim
    if region is not None:
        v, _ = restricted_potential(x, field, region)
        return PotentialValue(v, "restricted", d)
    if d < 5:
        raise UnsupportedRegionError("no stationary potential for d < 5; use potential_diff")
    policy = policy or ForcePolicy()
    _guard(x, field.points)
    if field.domain.mode == "torus":
        pf = periodic_field(field, tol=_ewald_tol(policy.tol), grid=False)
        _, u = pf.evaluate(x[None, :], want_potential=True)
        return PotentialValue(float(u[0]), "stationary", d)
    v = _centered_limit(lambda ball: restricted_potential(x, field, ball)[0], x, x, field, policy)
    return PotentialValue(v, "stationary", d)


def _centered_limit(fn, center, x, field, policy):
    """Limit of ``fn(Ball(center, r))`` along geometric radii with the Cauchy rule."""
    cap = _domain_cutoff(center, field)
    if policy.max_radius is not None:
        cap = min(cap, float(policy.max_radius))
    dists = np.sort(np.linalg.norm(field.points - center, axis=1)) if len(field) else np.zeros(0)
    r = min(_first_radius(center, field, policy, dists), cap)
    prev, inc = None, math.inf
    while True:
        cur = fn(Ball(tuple(center), r))
        if prev is not None:
            inc = abs(cur - prev)
            if inc < policy.tol:
                return cur
        if r >= cap:
            raise ConvergenceError(
                f"potential not settled by radius {r:.4g} (last increment {inc:.3g})",
                partial=cur,
                last_increment=inc,
            )
        prev = cur
        r = min(r * policy.growth, cap)


def potential_diff(x, y, field, region=None, policy=None):
    """``U(y) - U(x)``; exactly antisymmetric and zero on the diagonal.

    With a bounded ``region`` this is the difference of restricted
    potentials. Without one, torus fields use the periodic potential and
    window fields use balls centered at the midpoint of ``x`` and ``y``.
    """
    x = check_vector(x, field.dim)
    y = check_vector(y, field.dim)
    d = field.dim
    if np.array_equal(x, y):
        _guard(x, field.points if region is None else _stars_in(field, region))
        return PotentialValue(0.0, "difference", d)
    if region is not None:
        ux, _ = restricted_potential(x, field, region)
        uy, _ = restricted_potential(y, field, region)
        return PotentialValue(uy - ux, "difference", d)
    policy = policy or ForcePolicy()
    _guard(x, field.points)
    _guard(y, field.points)
    if field.domain.mode == "torus":
        pf = periodic_field(field, tol=_ewald_tol(policy.tol), grid=False)
        _, u = pf.evaluate(np.vstack([x, y]), want_potential=True)
        return PotentialValue(float(u[1] - u[0]), "difference", d)
    # the midpoint and the radii sequence are symmetric in (x, y)
    mid = 0.5 * (x + y)

    def diff(ball, a=x, b=y):
        return restricted_potential(b, field, ball)[0] - restricted_potential(a, field, ball)[0]

    forward = _centered_limit(diff, mid, x, field, policy)
    return PotentialValue(forward, "difference", d)


def boundary_distance(region, x):
    """Euclidean distance from ``x`` to the boundary of ``region``."""
    x = check_vector(x, region.dim)
    if isinstance(region, Ball):
        return abs(float(np.linalg.norm(x - np.asarray(region.center))) - region.radius)
    if isinstance(region, Annulus):
        r = float(np.linalg.norm(x - np.asarray(region.center)))
        return min(abs(r - region.p), abs(r - region.q))
    if isinstance(region, Box):
        y = np.abs(x - region.origin)
        h = region.half_widths
        if np.all(y <= h):
            return float(np.min(h - y))
        return float(np.linalg.norm(np.maximum(y - h, 0.0)))
    if isinstance(region, Cylinder):
        y = x - region.offset
        a = abs(y[0]) - region.L
        b = float(np.linalg.norm(y[1:])) - region.W
        if a <= 0 and b <= 0:
            return float(min(-a, -b))
        return float(math.hypot(max(a, 0.0), max(b, 0.0)))
    if isinstance(region, Complement):
        return boundary_distance(region.region, x)
    if isinstance(region, Intersection):
        return min(boundary_distance(r, x) for r in region.regions)
    raise UnsupportedRegionError(f"no boundary distance for {region.kind!r}")


def divergence_probe(x, field, region, h=1e-3):
    """Central-difference divergence of ``force_restricted(., field, region)`` at ``x``."""
    x = check_vector(x, field.dim)
    h = check_positive(h, "h")
    if len(field) and float(np.min(np.linalg.norm(field.points - x, axis=1))) <= 10 * h:
        raise ParameterError("probe is within 10h of a star")
    if boundary_distance(region, x) <= 10 * h:
        raise ParameterError("probe is within 10h of the region boundary")
    total = 0.0
    for i in range(field.dim):
        e = np.zeros(field.dim)
        e[i] = h
        fp = force_restricted(x + e, field, region, tol=1.0).components[i]
        fm = force_restricted(x - e, field, region, tol=1.0).components[i]
        total += (fp - fm) / (2 * h)
    return float(total)


def empty_box_expected_force(box, x):
    """Expected force at ``x`` inside a star-free ``box`` at unit background density.

    Only the slab left uncancelled by reflecting the box through ``x``
    contributes to each component, which reduces the volume integral to two
    face integrals per coordinate.
    """
    if not isinstance(box, Box):
        raise ParameterError("empty_box_expected_force needs a Box")
    x = check_vector(x, box.dim)
    y = x - box.origin
    h = box.half_widths
    if np.any(np.abs(y) >= h):
        raise ParameterError("x must lie in the interior of the box")
    d = box.dim
    q = (d - 2) / 2
    out = np.zeros(d)
    for i in range(d):
        if y[i] == 0.0:
            continue
        others = [j for j in range(d) if j != i]
        lo = -h[others] - y[others]
        hi = h[others] - y[others]
        near = _rect_integral(lo, hi, h[i] - abs(y[i]), q, 12)
        far = _rect_integral(lo, hi, h[i] + abs(y[i]), q, 12)
        out[i] = math.copysign((near - far) / (d - 2), y[i])
    return ForceVector(out, x)


# --------------------------------------------------------------------------
# compiled fields for fast repeated evaluation


@dataclass
class CompiledField:
    """Field data in the flat layout consumed by the compiled kernels."""

    mode: int
    stars: np.ndarray
    fpar: np.ndarray
    grid: np.ndarray = field(default_factory=lambda: np.zeros((4, 1, 1, 1)))
    kvec: np.ndarray | None = None
    akr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    aki: np.ndarray = field(default_factory=lambda: np.zeros(0))
    domain: object = None
    label_map: np.ndarray | None = None

    def __post_init__(self):
        d = self.stars.shape[1]
        if self.kvec is None:
            self.kvec = np.zeros((0, d))
        self.stars = np.ascontiguousarray(self.stars, dtype=float)

    @property
    def dim(self):
        return self.stars.shape[1]

    def args(self):
        return (self.mode, self.stars, self.fpar, self.grid, self.kvec, self.akr, self.aki)

    def evaluate(self, xs, want_potential=False):
        """Return ``(forces, potentials)`` at the rows of ``xs``."""
        xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=float)
        f, u, _, _ = _kernels.field_eval_many(self.mode, xs, self.stars, self.fpar, self.grid,
                                              self.kvec, self.akr, self.aki, bool(want_potential))
        return f, u

    def nearest(self, xs):
        xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=float)
        _, _, idx, dist = _kernels.field_eval_many(self.mode, xs, self.stars, self.fpar, self.grid,
                                                   self.kvec, self.akr, self.aki, False)
        return idx, dist


def _fpar(d, side=0.0, alpha=0.0, rc2=0.0, lam=0.0, lower=0.0, radius=0.0, const=0.0, center=None):
    p = np.zeros(7 + d)
    p[:7] = [side, alpha, rc2, lam, lower, radius, const]
    if center is not None:
        p[7:] = center
    return p


_PERIODIC_CACHE: dict = {}


def periodic_field(field, tol=1e-10, grid=None, grid_size=None, cutoff=None):
    """Ewald-summed periodic field of a torus star field, neutralized by a uniform background.

    The background density is ``n / side^d`` so that the periodic problem is
    neutral. ``grid`` selects the B-spline reciprocal grid (d = 3 only);
    the default uses it for d = 3. ``cutoff`` is the real-space radius
    (at most, and by default, half the side).
    """
    if field.domain.mode != "torus":
        raise ParameterError("periodic fields need a torus domain")
    if len(field) == 0:
        raise ParameterError("periodic field of an empty configuration is undefined")
    d = field.dim
    use_grid = (d == 3) if grid is None else bool(grid)
    if use_grid and d != 3:
        raise ParameterError("the reciprocal grid is only available for d = 3")
    key = (hashlib.sha1(field.points.tobytes()).hexdigest(), d, float(field.domain.side),
           float(tol), use_grid, grid_size, cutoff)
    hit = _PERIODIC_CACHE.get(key)
    if hit is not None:
        return hit
    side = float(field.domain.side)
    V = side**d
    stars = field.points
    n = len(stars)
    rc = side / 2 if cutoff is None else min(float(cutoff), side / 2)
    eta = math.log(1.0 / tol)
    alpha = math.sqrt(eta) / rc
    kmax = 2 * alpha * math.sqrt(eta)
    mmax = int(math.ceil(kmax * side / (2 * math.pi)))
    dk = 2 * math.pi / side
    rng = np.arange(-mmax, mmax + 1)
    mesh = np.stack(np.meshgrid(*([rng] * d), indexing="ij"), axis=-1).reshape(-1, d)
    k2all = np.sum((mesh * dk) ** 2, axis=1)
    # keep one of each +-k pair and double it
    first_nz = np.argmax(mesh != 0, axis=1)
    lead = mesh[np.arange(len(mesh)), first_nz]
    keep = (k2all > 0) & (k2all <= kmax * kmax) & (lead > 0)
    m = mesh[keep]
    k = m * dk
    k2 = k2all[keep]
    dkd = d * kappa(d)
    S = np.zeros(len(k), dtype=complex)
    for start in range(0, n, 256):
        S += np.exp(1j * (stars[start:start + 256] @ k.T)).sum(axis=0)
    a = 2 * dkd * np.exp(-k2 / (4 * alpha * alpha)) * S / (V * k2)
    const = (n / V) * dkd / (4 * alpha * alpha)
    fpar = _fpar(d, side, alpha, rc * rc, n / V, -side / 2, 0.0, const)
    if use_grid:
        M = grid_size or max(64, 1 << int(math.ceil(math.log2(8 * mmax))))
        M = min(M, 256) if grid_size is None else M
        coef = np.zeros((4, M, M, M), dtype=complex)
        # full +-k set with conjugate symmetry, shifted by the grid origin
        ph = np.exp(-1j * (k @ np.full(d, -side / 2)))
        half = 0.5 * a * ph
        theta = 2 * np.pi * m / M
        bsym = np.prod((4 + 2 * np.cos(theta)) / 6, axis=1)
        idx_p = tuple((m % M).T)
        idx_m = tuple(((-m) % M).T)
        for c in range(3):
            coef[c][idx_p] += k[:, c] * half / bsym
            coef[c][idx_m] += -k[:, c] * np.conj(half) / bsym
        coef[3][idx_p] += half / bsym
        coef[3][idx_m] += np.conj(half) / bsym
        grids = np.empty((4, M, M, M))
        for c in range(3):
            grids[c] = np.fft.fftn(coef[c]).imag
        grids[3] = -np.fft.fftn(coef[3]).real
        cf = CompiledField(0, stars, fpar, grid=grids, domain=field.domain)
    else:
        cf = CompiledField(1, stars, fpar, kvec=np.ascontiguousarray(k), akr=a.real.copy(),
                           aki=a.imag.copy(), domain=field.domain)
    if len(_PERIODIC_CACHE) > 16:
        _PERIODIC_CACHE.clear()
    _PERIODIC_CACHE[key] = cf
    return cf


def ball_field(field, ball):
    """Restricted field of the stars inside ``ball`` minus the background over ``ball``."""
    if not isinstance(ball, Ball):
        raise ParameterError("ball_field needs a Ball")
    d = field.dim
    stars = _stars_in(field, ball)
    if len(stars) == 0:
        stars = np.zeros((0, d))
    fpar = _fpar(d, lam=field.intensity, radius=ball.radius, center=np.asarray(ball.center))
    return CompiledField(2, stars, fpar, domain=field.domain)


def window_field(field):
    """Star sum truncated at the distance to the window edge (no background)."""
    dom = field.domain
    d = field.dim
    stars = field.points if len(field) else np.zeros((0, d))
    fpar = _fpar(d, side=dom.side, lower=dom.lower)
    return CompiledField(3, stars, fpar, domain=dom)
