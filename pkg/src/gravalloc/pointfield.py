"""Geometry primitives, regions, Poisson sampling and Poisson tail bounds.

Coordinates are Cartesian with the first axis playing the role of the
cylinder axis. Regions are closed sets: membership tests use ``<=``.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.stats import qmc

from ._validation import ParameterError, check_dim, check_points, check_positive, check_vector

__all__ = [
    "kappa",
    "sphere_area",
    "DomainSpec",
    "StarField",
    "Region",
    "Box",
    "Cylinder",
    "ShiftedCylinder",
    "Ball",
    "Annulus",
    "Complement",
    "Intersection",
    "CylinderSurface",
    "UnsupportedRegionError",
    "rng_for",
    "sample_poisson",
    "region_volume",
    "volume_estimate",
    "poisson_bounds",
    "POISSON_DELTA",
    "POISSON_POINTMASS_C",
    "read_jsonl",
]


class UnsupportedRegionError(ParameterError):
    """Raised for regions an operation cannot handle (e.g. unbounded ones)."""


def kappa(d):
    """Volume of the unit ball in ``d`` dimensions."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def sphere_area(m):
    """Surface area of the unit sphere S^m sitting in R^(m+1)."""
    return (m + 1) * kappa(m + 1)


# --------------------------------------------------------------------------
# domains and star fields


@dataclass(frozen=True)
class DomainSpec:
    """Simulation window: a cube ``[-side/2, side/2]^d`` (centered) or ``[0, side]^d``.

    In torus mode opposite faces are identified and the cube must be centered.
    """

    dim: int
    mode: str = "box"
    side: float = 1.0
    centered: bool = True

    def __post_init__(self):
        check_dim(self.dim)
        if self.mode not in ("box", "torus"):
            raise ParameterError(f"mode must be 'box' or 'torus', got {self.mode!r}")
        check_positive(self.side, "side")
        if self.mode == "torus" and not self.centered:
            raise ParameterError("torus domains must be origin-centered")

    @property
    def volume(self):
        return float(self.side) ** self.dim

    @property
    def lower(self):
        return -self.side / 2 if self.centered else 0.0

    def contains(self, points):
        p = check_points(points, self.dim)
        lo = self.lower
        return np.all((p >= lo) & (p <= lo + self.side), axis=1)

    def wrap(self, points):
        """Map points into the fundamental cell (torus mode only)."""
        if self.mode != "torus":
            raise ParameterError("wrap is only defined for torus domains")
        p = np.asarray(points, dtype=float)
        lo = self.lower
        return lo + np.mod(p - lo, self.side)

    def to_dict(self):
        return {"dim": self.dim, "mode": self.mode, "side": float(self.side), "centered": self.centered}


@dataclass(frozen=True)
class StarField:
    """A finite star configuration together with its provenance."""

    points: np.ndarray
    intensity: float
    domain: DomainSpec
    seed: int | None = None

    def __post_init__(self):
        pts = check_points(self.points, self.domain.dim)
        pts = np.array(pts, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        check_positive(self.intensity, "intensity")
        if len(pts) and not np.all(self.domain.contains(pts)):
            raise ParameterError("every star must lie inside the domain")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.domain.dim

    def with_points(self, points):
        return StarField(points, self.intensity, self.domain, self.seed)

    def to_jsonl(self, path):
        """Write a header record followed by one point per line (17 significant digits)."""
        header = {
            "record": "header",
            "schema": 1,
            "domain": self.domain.to_dict(),
            "intensity": float(self.intensity),
            "seed": self.seed,
            "count": len(self),
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for p in self.points:
                fh.write("[" + ",".join(format(float(v), ".17g") for v in p) + "]\n")

    @classmethod
    def from_jsonl(cls, path):
        return read_jsonl(path)


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("record") != "header":
            raise ParameterError("first JSONL record must be the header")
        pts = [json.loads(line) for line in fh if line.strip()]
    dom = DomainSpec(**header["domain"])
    if len(pts) != header["count"]:
        raise ParameterError("point count does not match header")
    arr = np.array(pts, dtype=float).reshape(-1, dom.dim)
    return StarField(arr, header["intensity"], dom, header["seed"])


def rng_for(seed, replica=0, purpose="stars"):
    """Counter-based generator keyed by (seed, replica, purpose).

    Uses Philox so that independent sub-streams can be derived without
    sharing state.
    """
    tag = zlib.crc32(str(purpose).encode("utf-8"))
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replica), tag])
    return np.random.Generator(np.random.Philox(ss))


def sample_poisson(domain, intensity, seed, replica=0, purpose="stars"):
    """Sample a Poisson point process of the given intensity in ``domain``.

    Parameters
    ----------
    domain : DomainSpec
    intensity : float
        Expected number of points per unit volume.
    seed : int
        Master seed. ``(seed, replica, purpose)`` fully determines the output.

    Returns
    -------
    StarField
    """
    check_positive(intensity, "intensity")
    if not isinstance(domain, DomainSpec):
        raise ParameterError("domain must be a DomainSpec")
    rng = rng_for(seed, replica, purpose)
    count = rng.poisson(intensity * domain.volume)
    pts = domain.lower + domain.side * rng.random((count, domain.dim))
    return StarField(pts, intensity, domain, int(seed))


# --------------------------------------------------------------------------
# regions


class Region:
    """Base class for closed regions of R^d."""

    kind = "region"
    dim: int

    @property
    def bounded(self):
        return True

    def contains(self, points):  # pragma: no cover - abstract
        raise NotImplementedError

    def bounding_box(self):
        """Return (lower, upper) corner arrays."""
        raise UnsupportedRegionError(f"{self.kind} has no bounding box")

    def exact_volume(self):
        return None


@dataclass(frozen=True)
class Box(Region):
    """``{|x_1| <= L, |x_i| <= W for i >= 2}``, optionally translated by ``center``."""

    L: float
    W: float
    dim: int = 3
    center: tuple | None = None
    kind = "box"

    def __post_init__(self):
        check_positive(self.L, "L")
        check_positive(self.W, "W")
        check_dim(self.dim)
        if self.center is not None:
            c = tuple(float(v) for v in check_vector(self.center, self.dim, "center"))
            object.__setattr__(self, "center", c)

    @property
    def origin(self):
        return np.zeros(self.dim) if self.center is None else np.asarray(self.center)

    @property
    def half_widths(self):
        h = np.full(self.dim, float(self.W))
        h[0] = self.L
        return h

    def contains(self, points):
        p = check_points(points, self.dim) - self.origin
        return np.all(np.abs(p) <= self.half_widths, axis=1)

    def bounding_box(self):
        return self.origin - self.half_widths, self.origin + self.half_widths

    def exact_volume(self):
        return float(np.prod(2 * self.half_widths))

    def scaled(self, factor):
        return Box(self.L * factor, self.W * factor, self.dim, self.center)


@dataclass(frozen=True)
class Cylinder(Region):
    """``{|x_1| <= L, |x_perp| <= W}``."""

    L: float
    W: float
    dim: int = 3
    kind = "cylinder"

    def __post_init__(self):
        check_positive(self.L, "L")
        check_positive(self.W, "W")
        check_dim(self.dim)

    @property
    def offset(self):
        return np.zeros(self.dim)

    def contains(self, points):
        p = check_points(points, self.dim) - self.offset
        return (np.abs(p[:, 0]) <= self.L) & (np.linalg.norm(p[:, 1:], axis=1) <= self.W)

    def bounding_box(self):
        h = np.full(self.dim, float(self.W))
        h[0] = self.L
        return self.offset - h, self.offset + h

    def exact_volume(self):
        return 2 * self.L * kappa(self.dim - 1) * self.W ** (self.dim - 1)


@dataclass(frozen=True)
class ShiftedCylinder(Cylinder):
    """A :class:`Cylinder` translated by ``shift``."""

    shift: tuple = ()
    kind = "shiftedCylinder"

    def __post_init__(self):
        super().__post_init__()
        s = tuple(float(v) for v in check_vector(self.shift, self.dim, "shift"))
        object.__setattr__(self, "shift", s)

    @property
    def offset(self):
        return np.asarray(self.shift)


@dataclass(frozen=True)
class Ball(Region):
    center: tuple
    radius: float
    kind = "ball"

    def __post_init__(self):
        c = tuple(float(v) for v in check_vector(self.center, name="center"))
        object.__setattr__(self, "center", c)
        check_dim(len(c))
        check_positive(self.radius, "radius")

    @property
    def dim(self):
        return len(self.center)

    def contains(self, points):
        p = check_points(points, self.dim)
        return np.linalg.norm(p - np.asarray(self.center), axis=1) <= self.radius

    def bounding_box(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def exact_volume(self):
        return kappa(self.dim) * self.radius**self.dim


@dataclass(frozen=True)
class Annulus(Region):
    """``{q <= |x - center| <= p}``."""

    center: tuple
    q: float
    p: float
    kind = "annulus"

    def __post_init__(self):
        c = tuple(float(v) for v in check_vector(self.center, name="center"))
        object.__setattr__(self, "center", c)
        check_dim(len(c))
        check_positive(self.q, "q", allow_zero=True)
        check_positive(self.p, "p")
        if not self.p > self.q:
            raise ParameterError("annulus needs p > q")

    @property
    def dim(self):
        return len(self.center)

    def contains(self, points):
        r = np.linalg.norm(check_points(points, self.dim) - np.asarray(self.center), axis=1)
        return (r >= self.q) & (r <= self.p)

    def bounding_box(self):
        c = np.asarray(self.center)
        return c - self.p, c + self.p

    def exact_volume(self):
        return kappa(self.dim) * (self.p**self.dim - self.q**self.dim)


@dataclass(frozen=True)
class Complement(Region):
    region: Region
    kind = "complement"

    @property
    def dim(self):
        return self.region.dim

    @property
    def bounded(self):
        return False

    def contains(self, points):
        # closure of the complement: boundary points belong to both sides
        p = check_points(points, self.dim)
        inside = self.region.contains(p)
        return ~inside | _on_boundary(self.region, p)


def _on_boundary(region, p, eps=0.0):
    if isinstance(region, Ball):
        return np.linalg.norm(p - np.asarray(region.center), axis=1) == region.radius
    if isinstance(region, Box):
        q = np.abs(p - region.origin)
        h = region.half_widths
        return np.all(q <= h, axis=1) & np.any(q == h, axis=1)
    return np.zeros(len(p), dtype=bool)


@dataclass(frozen=True)
class Intersection(Region):
    regions: tuple
    kind = "intersection"

    def __post_init__(self):
        regs = tuple(self.regions)
        if not regs:
            raise ParameterError("intersection of zero regions")
        dims = {r.dim for r in regs}
        if len(dims) != 1:
            raise ParameterError("regions have mismatched dimensions")
        object.__setattr__(self, "regions", regs)

    @property
    def dim(self):
        return self.regions[0].dim

    @property
    def bounded(self):
        return any(r.bounded for r in self.regions)

    def contains(self, points):
        p = check_points(points, self.dim)
        out = np.ones(len(p), dtype=bool)
        for r in self.regions:
            out &= r.contains(p)
        return out

    def bounding_box(self):
        boxes = [r.bounding_box() for r in self.regions if r.bounded]
        if not boxes:
            raise UnsupportedRegionError("intersection is unbounded")
        lo = np.max([b[0] for b in boxes], axis=0)
        hi = np.min([b[1] for b in boxes], axis=0)
        return lo, hi

    def as_difference(self):
        """Return (outer, inner) if this is ``outer minus inner`` with inner inside outer, else None."""
        if len(self.regions) != 2:
            return None
        a, b = self.regions
        if isinstance(a, Complement):
            a, b = b, a
        if not isinstance(b, Complement) or isinstance(a, Complement):
            return None
        inner = b.region
        if _contained_in(inner, a):
            return a, inner
        return None


def _contained_in(inner, outer):
    """Conservative containment test for the simple convex shapes."""
    try:
        lo, hi = inner.bounding_box()
    except UnsupportedRegionError:
        return False
    if isinstance(outer, Box):
        olo, ohi = outer.bounding_box()
        return bool(np.all(lo >= olo) and np.all(hi <= ohi))
    if isinstance(outer, Ball):
        if isinstance(inner, (Ball, Annulus)):
            r_in = inner.radius if isinstance(inner, Ball) else inner.p
            gap = np.linalg.norm(np.asarray(inner.center) - np.asarray(outer.center))
            return gap + r_in <= outer.radius
        corners = _box_corners(lo, hi)
        return bool(np.all(outer.contains(corners)))
    if isinstance(outer, Cylinder) and isinstance(inner, Cylinder):
        if not np.allclose(inner.offset, outer.offset):
            return False
        return inner.L <= outer.L and inner.W <= outer.W
    return False


def _box_corners(lo, hi):
    d = len(lo)
    idx = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
    return np.where(idx == 0, lo, hi)


@dataclass(frozen=True)
class CylinderSurface:
    """Boundary of ``Cyl(L, W)``; with ``include_caps=False`` only the curved part."""

    L: float
    W: float
    dim: int = 3
    include_caps: bool = False

    def __post_init__(self):
        check_positive(self.L, "L")
        check_positive(self.W, "W")
        check_dim(self.dim)

    @property
    def curved_area(self):
        return 2 * self.L * sphere_area(self.dim - 2) * self.W ** (self.dim - 2)

    @property
    def area(self):
        caps = 2 * kappa(self.dim - 1) * self.W ** (self.dim - 1) if self.include_caps else 0.0
        return self.curved_area + caps

    def sample(self, n, rng):
        """Uniform points on the curved part."""
        t = rng.uniform(-self.L, self.L, n)
        u = rng.standard_normal((n, self.dim - 1))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return np.column_stack([t, self.W * u])


# --------------------------------------------------------------------------
# volumes


def region_volume(region, rtol=1e-3, n=2**16, seed=0):
    """Volume of a bounded region.

    Closed forms are used for boxes, cylinders, balls and annuli and for
    ``outer minus inner`` differences of them. Other compositions fall back
    to a scrambled Sobol estimate whose standard error must be below
    ``rtol`` relative.
    """
    if not region.bounded:
        raise UnsupportedRegionError("unbounded region has infinite volume")
    v = region.exact_volume()
    if v is not None:
        return float(v)
    if isinstance(region, Intersection):
        diff = region.as_difference()
        if diff is not None:
            outer, inner = diff
            vo, vi = outer.exact_volume(), inner.exact_volume()
            if vo is not None and vi is not None:
                return float(vo - vi)
    value, err = volume_estimate(region, n=n, seed=seed)
    if value > 0 and err > rtol * value:
        raise ParameterError(f"volume fallback error {err:.3g} exceeds tolerance")
    return value


def volume_estimate(region, n=2**16, seed=0, batches=8):
    """Randomized quasi-Monte Carlo estimate ``(value, standard error)``."""
    lo, hi = region.bounding_box()
    box_vol = float(np.prod(hi - lo))
    fractions = []
    for b in range(batches):
        sob = qmc.Sobol(region.dim, scramble=True, seed=rng_for(seed, b, "volume"))
        pts = lo + (hi - lo) * sob.random(n // batches)
        fractions.append(region.contains(pts).mean())
    fractions = np.asarray(fractions)
    return box_vol * fractions.mean(), box_vol * fractions.std(ddof=1) / math.sqrt(batches)


# --------------------------------------------------------------------------
# Poisson bounds

POISSON_DELTA = 1.0
# P(X = n) >= c n^{-1/2} exp(-(n - lam)^2 / lam) for integer n >= lam;
# the calibration minimum over lam in [0.05, 200] is exp(-1) at lam = n = 1
POISSON_POINTMASS_C = 0.36


def poisson_bounds(lam, t, part):
    """Tail and point-mass bounds for ``X ~ Poisson(lam)``.

    Parameters
    ----------
    lam : float
        Mean.
    t : float
        Threshold (``upper-i``, ``concentration-ii``) or integer ``n``
        (``pointmass-iii``).
    part : {"upper-i", "concentration-ii", "pointmass-iii"}

    Returns
    -------
    float
        ``exp(-t log(t/lam) / 4)`` bounding ``P(X >= t)``;
        ``2 exp(-t^2 / (3 lam))`` bounding ``P(|X - lam| >= t)``;
        ``c n^{-1/2} exp(-(n - lam)^2 / lam)`` lower-bounding ``P(X = n)``.
    """
    lam = check_positive(lam, "lam")
    if part == "upper-i":
        if not t >= 2 * lam:
            raise ParameterError("upper-i needs t >= 2 lam")
        return math.exp(-0.25 * t * math.log(t / lam))
    if part == "concentration-ii":
        if not 0 <= t <= POISSON_DELTA * lam:
            raise ParameterError("concentration-ii needs 0 <= t <= delta lam")
        return 2 * math.exp(-(t**2) / (3 * lam))
    if part == "pointmass-iii":
        if float(t) != int(t) or t < lam:
            raise ParameterError("pointmass-iii needs an integer n >= lam")
        n = int(t)
        return POISSON_POINTMASS_C / math.sqrt(n) * math.exp(-((n - lam) ** 2) / lam)
    raise ParameterError(f"unknown part {part!r}")


def poisson_exact(lam, t, part):
    """Exact probability matching :func:`poisson_bounds` (oracle helper)."""
    if part == "upper-i":
        return float(stats.poisson.sf(math.ceil(t) - 1, lam))
    if part == "concentration-ii":
        hi = stats.poisson.sf(math.ceil(lam + t) - 1, lam)
        lo = stats.poisson.cdf(math.floor(lam - t), lam) if lam - t >= 0 else 0.0
        return float(min(1.0, hi + lo))
    if part == "pointmass-iii":
        return float(stats.poisson.pmf(int(t), lam))
    raise ParameterError(f"unknown part {part!r}")
