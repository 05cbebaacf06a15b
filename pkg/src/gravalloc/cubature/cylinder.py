"""Equal-measure patches on a cylinder surface and moment-matched point sets.

A patch is a product of an axial band ``[x_lo, x_hi]`` and a box in
hyperspherical coordinates on the transverse sphere ``S^(d-2)`` of radius
``W``. Angles are ``(theta_1, ..., theta_(m-1), phi)`` for ``S^m`` with
``s_1 = cos theta_1``, ..., ``s_(m+1) = sin theta_1 ... sin theta_(m-1) sin phi``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .._validation import ParameterError, check_dim, check_positive
from ..pointfield import sphere_area
from .moments import monomials, multi_indices

__all__ = [
    "NuMeasure",
    "nu_measure",
    "sphere_partition",
    "Patch",
    "PatchDecomposition",
    "partition_cylinder",
    "patch_moments",
    "fit_patch_points",
    "certify",
    "default_n1",
    "CertificationError",
    "PatchRule",
    "CubatureRule",
    "build_cubature",
]


class CertificationError(RuntimeError):
    def __init__(self, message, achieved=None, patch_id=None):
        super().__init__(message)
        self.achieved = achieved
        self.patch_id = patch_id


# --------------------------------------------------------------------------
# the surface measure


@dataclass(frozen=True)
class NuMeasure:
    """``beta * v(x_1) dsigma`` on the curved surface, ``v`` rising linearly from 1 at -L to 2 at L."""

    L: float
    W: float
    dim: int
    beta: float = 1.0

    def density(self, x1):
        x1 = np.asarray(x1, dtype=float)
        return self.beta * (1.0 + (x1 + self.L) / (2 * self.L))

    @property
    def ring_area(self):
        """Area of the transverse sphere of radius W."""
        return sphere_area(self.dim - 2) * self.W ** (self.dim - 2)

    def cumulative(self, x1):
        """Mass of the part of the surface with first coordinate below ``x1``."""
        s = np.asarray(x1, dtype=float) + self.L
        return self.beta * self.ring_area * (s + s * s / (4 * self.L))

    def inverse_cumulative(self, mass):
        m = np.asarray(mass, dtype=float) / (self.beta * self.ring_area)
        # s^2/(4L) + s - m = 0
        s = 2 * self.L * (np.sqrt(1 + m / self.L) - 1)
        return s - self.L

    @property
    def total(self):
        return float(self.cumulative(self.L))

    def plain_area(self):
        return 2 * self.L * self.ring_area


def nu_measure(L, W, beta=1.0, dim=3):
    check_positive(L, "L")
    check_positive(W, "W")
    check_positive(beta, "beta")
    check_dim(dim)
    return NuMeasure(float(L), float(W), int(dim), float(beta))


# --------------------------------------------------------------------------
# equal-area partition of the sphere


def _sin_power_integral(p, a, b):
    """``int_a^b sin(t)^p dt`` for ``0 <= a <= b <= pi``."""
    if p == 0:
        return b - a
    scale = sphere_area(p + 1) / sphere_area(p)
    q = (p + 1) / 2
    return scale * (special.betainc(q, q, math.sin(b / 2) ** 2) - special.betainc(q, q, math.sin(a / 2) ** 2))


def _sin_power_quantile(p, a, b, u):
    """Inverse of the normalized ``sin^p`` distribution on ``[a, b]``."""
    u = np.asarray(u, dtype=float)
    if p == 0:
        return a + (b - a) * u
    q = (p + 1) / 2
    fa = special.betainc(q, q, math.sin(a / 2) ** 2)
    fb = special.betainc(q, q, math.sin(b / 2) ** 2)
    return 2 * np.arcsin(np.sqrt(special.betaincinv(q, q, fa + u * (fb - fa))))


def _cap_colatitude(m, area):
    frac = min(max(area / sphere_area(m), 0.0), 1.0)
    return 2 * math.asin(math.sqrt(special.betaincinv(m / 2, m / 2, frac)))


def _cap_area(m, theta):
    return sphere_area(m) * special.betainc(m / 2, m / 2, math.sin(theta / 2) ** 2)


def _full_box(m):
    return [(0.0, math.pi)] * (m - 1) + [(0.0, 2 * math.pi)]


def box_area(box):
    """Area of a hyperspherical-coordinate box on the unit sphere ``S^m``, ``m = len(box)``."""
    m = len(box)
    a = box[-1][1] - box[-1][0]
    for j, (lo, hi) in enumerate(box[:-1]):
        a *= _sin_power_integral(m - 1 - j, lo, hi)
    return a


def sphere_partition(m, n):
    """Recursive zonal equal-area partition of ``S^m`` into ``n`` boxes.

    Polar caps and collars of latitude are sized so that every region has
    area ``|S^m| / n``; each collar is split by partitioning ``S^(m-1)``.
    """
    if n < 1:
        raise ParameterError("need at least one region")
    if n == 1:
        return [_full_box(m)]
    if m == 1:
        step = 2 * math.pi / n
        return [[(j * step, (j + 1) * step)] for j in range(n)]
    area = sphere_area(m) / n
    cap = _cap_colatitude(m, area)
    if n == 2:
        return [[(0.0, cap)] + _full_box(m - 1), [(cap, math.pi)] + _full_box(m - 1)]
    ideal = area ** (1.0 / m)
    n_collars = max(1, int(round((math.pi - 2 * cap) / ideal)))
    width = (math.pi - 2 * cap) / n_collars
    counts = []
    carry = 0.0
    for i in range(n_collars):
        a0 = _cap_area(m, cap + i * width)
        a1 = _cap_area(m, cap + (i + 1) * width)
        want = (a1 - a0) / area + carry
        c = int(round(want))
        carry = want - c
        counts.append(c)
    counts[-1] += (n - 2) - sum(counts)
    regions = [[(0.0, cap)] + _full_box(m - 1)]
    done = 1
    lo = cap
    for c in counts:
        if c <= 0:
            continue
        done += c
        hi = _cap_colatitude(m, done * area) if done < n - 1 else math.pi - cap
        for sub in sphere_partition(m - 1, c):
            regions.append([(lo, hi)] + sub)
        lo = hi
    regions.append([(math.pi - cap, math.pi)] + _full_box(m - 1))
    return regions


def sphere_embed(angles):
    """Unit-sphere points for rows of hyperspherical angles; shape (n, m + 1)."""
    angles = np.atleast_2d(angles)
    n, m = angles.shape
    out = np.empty((n, m + 1))
    prod = np.ones(n)
    for i in range(m):
        out[:, i] = prod * np.cos(angles[:, i])
        prod = prod * np.sin(angles[:, i])
    out[:, m] = prod
    return out


def sphere_embed_jacobian(angles):
    """Derivatives ``d s_i / d angle_l``; shape (n, m + 1, m)."""
    angles = np.atleast_2d(angles)
    n, m = angles.shape
    s = np.sin(angles)
    c = np.cos(angles)
    jac = np.zeros((n, m + 1, m))
    for i in range(m + 1):
        for ell in range(min(i + 1, m)):
            val = np.ones(n)
            for j in range(min(i, m)):
                val = val * (c[:, j] if j == ell else s[:, j])
            if i < m:
                val = val * (-s[:, i] if ell == i else c[:, i])
            jac[:, i, ell] = val
    return jac


# --------------------------------------------------------------------------
# patches


@dataclass(frozen=True)
class Patch:
    index: int
    band: tuple
    box: tuple
    mass: float
    diameter: float

    @property
    def bounds(self):
        """Parameter-space box ``[(x_lo, x_hi), (angle bounds)...]``."""
        return (self.band,) + tuple(self.box)


@dataclass
class PatchDecomposition:
    measure: NuMeasure
    tau: float
    tau_eff: float
    band_edges: np.ndarray
    boxes: list
    patches: list
    constants: dict = field(default_factory=dict)

    @property
    def K(self):
        return len(self.patches)

    @property
    def dim(self):
        return self.measure.dim


def _surface_points(params, W):
    params = np.atleast_2d(params)
    return np.column_stack([params[:, 0], W * sphere_embed(params[:, 1:])])


def _patch_diameter(band, box, W, per_axis=5):
    axes = [np.linspace(band[0], band[1], 2)] + [np.linspace(lo, hi, per_axis) for lo, hi in box]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 1 + len(box))
    pts = _surface_points(grid, W)
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt(np.max(np.sum(diff * diff, axis=2))))


def partition_cylinder(L, W, tau, dim=3, beta=1.0, cover=None):
    """Split the curved surface into patches of equal ``nu``-mass and diameter of order ``tau``.

    The axial direction is cut into bands of equal mass and each band's
    transverse sphere into equal-area cells. The patch count is rounded, so
    the common patch mass is ``tau_eff^(d-1)`` with ``tau_eff`` close to ``tau``.
    With ``cover`` set, only the part ``|x_1| <= cover`` of the surface is
    partitioned, still under the density of the full length ``2L``.
    """
    mu = nu_measure(L, W, beta, dim)
    tau = check_positive(tau, "tau")
    cover = L if cover is None else check_positive(cover, "cover")
    if cover > L:
        raise ParameterError("cover must not exceed L")
    if not tau < W:
        raise ParameterError("need tau < W")
    if cover < tau:
        raise ParameterError("need cover >= tau")
    m = dim - 2
    n_sphere = max(1, int(round(sphere_area(m) * W**m / tau**m)))
    per_patch = tau ** (dim - 1)
    lo_mass, hi_mass = float(mu.cumulative(-cover)), float(mu.cumulative(cover))
    covered = (hi_mass - lo_mass) / beta
    n_bands = int(round(covered / (n_sphere * per_patch)))
    if n_bands < 1:
        raise ParameterError("tau too large: fewer than one patch per band")
    K = n_bands * n_sphere
    tau_eff = (covered / K) ** (1.0 / (dim - 1))
    edges = mu.inverse_cumulative(np.linspace(lo_mass, hi_mass, n_bands + 1))
    edges[0], edges[-1] = -cover, cover
    boxes = sphere_partition(m, n_sphere)
    # patches in one band are congruent up to rotation only for m = 1; measure each shape once per band
    box_diam = {}
    patches = []
    for b in range(n_bands):
        band = (float(edges[b]), float(edges[b + 1]))
        band_mass = float(mu.cumulative(band[1]) - mu.cumulative(band[0]))
        for j, box in enumerate(boxes):
            mass = band_mass * box_area(box) / sphere_area(m)
            key = (b, j if m > 1 else 0)
            if key not in box_diam:
                box_diam[key] = _patch_diameter(band, box, W)
            patches.append(Patch(len(patches), band, tuple(tuple(iv) for iv in box), mass, box_diam[key]))
    masses = np.array([p.mass for p in patches])
    diam = np.array([p.diameter for p in patches])
    consts = {
        "diameter_constant": float(diam.max() / tau_eff),
        "count_constant": float(K / (cover * W ** (dim - 2) * tau_eff ** (-(dim - 1)))),
        "mass_spread": float((masses.max() - masses.min()) / masses.mean()),
        "n_bands": n_bands,
        "n_sphere": n_sphere,
    }
    return PatchDecomposition(mu, tau, tau_eff, edges, boxes, patches, consts)


# --------------------------------------------------------------------------
# patch moments by tensor quadrature


def _patch_quadrature(patch, mu, order):
    """Nodes (parameter rows) and normalized weights of a product rule for ``nu`` on the patch."""
    x, w = np.polynomial.legendre.leggauss(order)
    bounds = patch.bounds
    m = len(bounds) - 1
    axes, wts = [], []
    for i, (lo, hi) in enumerate(bounds):
        half = 0.5 * (hi - lo)
        nodes = lo + half * (x + 1)
        ww = half * w
        if i == 0:
            ww = ww * mu.density(nodes)
        elif i < m:
            ww = ww * np.sin(nodes) ** (m - i)
        axes.append(nodes)
        wts.append(ww)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m + 1)
    weight = wts[0]
    for ww in wts[1:]:
        weight = np.multiply.outer(weight, ww)
    weight = weight.ravel()
    return grid, weight / weight.sum()


def patch_moments(patch, mu, alphas, center, order=14, scale=1.0):
    """``nu``-averages of ``((w - center) / scale)^a`` over the patch."""
    grid, weight = _patch_quadrature(patch, mu, order)
    pts = (_surface_points(grid, mu.W) - center) / scale
    return weight @ monomials(pts, alphas)


def _patch_center(patch, W):
    mid = np.array([0.5 * (lo + hi) for lo, hi in patch.bounds])
    return _surface_points(mid, W)[0]


def _corner_points(patch, W):
    bounds = patch.bounds
    grid = np.stack(np.meshgrid(*[np.array(b) for b in bounds], indexing="ij"), axis=-1).reshape(-1, len(bounds))
    return _surface_points(grid, W)


def _seed_params(patch, mu, n1):
    """Product of per-axis mass quantiles (midpoint rule in each cumulative coordinate)."""
    u = (np.arange(n1) + 0.5) / n1
    bounds = patch.bounds
    m = len(bounds) - 1
    axes = []
    lo, hi = bounds[0]
    c0, c1 = mu.cumulative(lo), mu.cumulative(hi)
    axes.append(mu.inverse_cumulative(c0 + u * (c1 - c0)))
    for i, (lo, hi) in enumerate(bounds[1:], start=1):
        axes.append(_sin_power_quantile(m - i if i < m else 0, lo, hi, u))
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m + 1)


def _translate_errors(errors, alphas, shifts):
    """Errors of ``(w - y)^a`` from centered-moment errors, for ``y = center - shift``.

    Uses ``(w - y)^a = sum_b C(a, b) (w - c)^b (c - y)^(a - b)``.
    """
    index = {tuple(a): i for i, a in enumerate(alphas)}
    out = np.zeros((len(shifts), len(alphas)))
    for i, a in enumerate(alphas):
        ranges = [range(ai + 1) for ai in a]
        for b in np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, len(a)):
            if not b.any():
                continue
            coef = np.prod([math.comb(int(ai), int(bi)) for ai, bi in zip(a, b)])
            diff = a - b
            out[:, i] += coef * errors[index[tuple(b)]] * np.prod(shifts ** diff, axis=1)
    return out


def certify(points, patch, mu, k, order=14):
    """Worst error of ``mean (w - y)^a`` against the patch ``nu``-average.

    ``y`` runs over the patch center and the corners of its parameter box.
    """
    d = mu.dim
    alphas = multi_indices(d, k)
    c = _patch_center(patch, mu.W)
    target = patch_moments(patch, mu, alphas, c, order)
    emp = monomials(points - c, alphas).mean(axis=0)
    err = emp - target
    ys = np.vstack([c, _corner_points(patch, mu.W)])
    return float(np.max(np.abs(_translate_errors(err, alphas, c - ys)))), ys


def fit_patch_points(patch, mu, n1, k, delta, max_nfev=200):
    """Place ``n1^(d-1)`` points in ``patch`` whose equal-weight moments match ``nu`` up to degree ``k``.

    Seeds are a product grid of per-axis mass quantiles; they are refined by
    bounded least squares in parameter space, so the points stay on the patch.

    Returns
    -------
    points : ndarray (n, d)
    certified : float
        Worst moment error over the certification centers.

    Raises
    ------
    CertificationError
        If the certified error exceeds ``delta``.
    """
    d = mu.dim
    W = mu.W
    alphas = multi_indices(d, k)
    c = _patch_center(patch, W)
    scale = max(patch.diameter, 1e-12)
    # whiten: residuals are taken in a nu-orthonormal basis of the monomial span,
    # which removes the near-dependence of monomials on a thin curved patch
    grid, weight = _patch_quadrature(patch, mu, 14)
    vander = monomials((_surface_points(grid, W) - c) / scale, alphas)
    mean = weight @ vander
    _, sing, vt = np.linalg.svd(np.sqrt(weight)[:, None] * (vander - mean), full_matrices=False)
    keep = sing > 1e-11 * sing[0]
    basis = vt[keep].T / sing[keep]
    target = mean @ basis
    p0 = _seed_params(patch, mu, n1)
    n, npar = p0.shape
    lo = np.array([b[0] for b in patch.bounds])
    hi = np.array([b[1] for b in patch.bounds])
    kmax = k

    def unpack(v):
        return v.reshape(n, npar)

    def resid(v):
        u = (_surface_points(unpack(v), W) - c) / scale
        return monomials(u, alphas).mean(axis=0) @ basis - target

    def jac(v):
        P = unpack(v)
        u = (_surface_points(P, W) - c) / scale
        J_s = sphere_embed_jacobian(P[:, 1:])
        du = np.zeros((n, d, npar))
        du[:, 0, 0] = 1.0 / scale
        du[:, 1:, 1:] = W * J_s / scale
        pw = np.ones((kmax + 1,) + u.shape)
        for q in range(1, kmax + 1):
            pw[q] = pw[q - 1] * u
        out = np.zeros((len(alphas), n, npar))
        for ai, a in enumerate(alphas):
            for i in range(d):
                if a[i] == 0:
                    continue
                part = a[i] * pw[a[i] - 1, :, i]
                for j in range(d):
                    if j != i:
                        part = part * pw[a[j], :, j]
                out[ai] += part[:, None] * du[:, i, :]
        return basis.T @ out.reshape(len(alphas), -1) / n

    x0 = np.clip(p0.ravel(), np.tile(lo, n), np.tile(hi, n))
    res = optimize.least_squares(resid, x0, jac=jac, bounds=(np.tile(lo, n), np.tile(hi, n)),
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev, method="trf")
    pts = _surface_points(unpack(res.x), W)
    cert, _ = certify(pts, patch, mu, k)
    if cert > delta:
        raise CertificationError(f"patch {patch.index}: moment error {cert:.3g} exceeds {delta:.3g}",
                                 achieved=cert, patch_id=patch.index)
    return pts, cert


@dataclass
class PatchRule:
    patch_id: int
    points: np.ndarray
    certified_error: float


@dataclass
class CubatureRule:
    decomposition: PatchDecomposition
    rules: list
    k: int
    delta: float
    n: int

    @property
    def points(self):
        return np.vstack([r.points for r in self.rules])

    @property
    def worst_error(self):
        return max(r.certified_error for r in self.rules)

    def to_json(self, path=None):
        payload = {
            "k": self.k,
            "delta": self.delta,
            "n": self.n,
            "tau_eff": self.decomposition.tau_eff,
            "patches": [
                {"patch_id": r.patch_id, "points": r.points.tolist(), "certified_error": r.certified_error,
                 "delta": self.delta, "k": self.k, "n": self.n}
                for r in self.rules
            ],
        }
        text = json.dumps(payload)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def default_n1(k, d):
    """Smallest ``n1`` with at least twice as many free parameters as moment equations."""
    need = 2 * len(multi_indices(d, k))
    n1 = 1
    while n1 ** (d - 1) * (d - 1) < need:
        n1 += 1
    return n1


def build_cubature(decomp, k, delta, n1=None, patches=None):
    """Fit and certify a point set on every patch (or the listed patch indices)."""
    mu = decomp.measure
    n1 = n1 or default_n1(k, mu.dim)
    chosen = decomp.patches if patches is None else [decomp.patches[i] for i in patches]
    rules = []
    for p in chosen:
        pts, cert = fit_patch_points(p, mu, n1, k, delta)
        rules.append(PatchRule(p.index, pts, cert))
    return CubatureRule(decomp, rules, k, delta, n1 ** (mu.dim - 1))
