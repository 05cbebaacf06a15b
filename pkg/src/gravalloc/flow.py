"""Gravitational flow integration, basin maps and cell statistics."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from . import _kernels
from ._validation import ParameterError, check_points, check_positive, check_vector
from .force import CompiledField, ForcePolicy, SingularityError, periodic_field, window_field
from .pointfield import Ball, rng_for

__all__ = [
    "IntegrationError",
    "QualityError",
    "DegenerateCellError",
    "Trajectory",
    "compile_field",
    "integrate_flow",
    "flow_many",
    "TimePotentialReport",
    "check_time_potential",
    "trap_radii",
    "BasinMap",
    "assign_basins",
    "CellStats",
    "cell_statistics",
    "liouville_ratio",
    "capture_time_fraction",
]

STATUS_NAMES = {
    _kernels.STATUS_CAPTURED: "captured",
    _kernels.STATUS_TIMEOUT: "timeout",
    _kernels.STATUS_LEFT: "left-domain",
    _kernels.STATUS_UNDERFLOW: "underflow",
    _kernels.STATUS_INFERRED: "inferred",
    _kernels.STATUS_MAXSTEPS: "max-steps",
}

R_CAP = 1e-3
RTOL = 1e-6
H_MAX = 0.1


class IntegrationError(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class QualityError(RuntimeError):
    pass


class DegenerateCellError(ValueError):
    pass


def compile_field(field, policy=None, grid=None):
    """Pick the compiled representation of the force used for flows.

    Torus fields use Ewald summation (the B-spline grid for d = 3 unless
    ``grid=False``); window fields use the star sum truncated at the
    distance to the window edge.
    """
    if isinstance(field, CompiledField):
        return field
    policy = policy or ForcePolicy()
    if field.domain.mode == "torus":
        # a short real-space cutoff halves the cost; force error stays below 1e-4
        spacing = (field.domain.volume / max(len(field), 1)) ** (1 / field.dim)
        return periodic_field(field, tol=1e-7, grid=grid, cutoff=1.2 * spacing)
    return window_field(field)


_EMPTY_MASK = np.zeros(1, dtype=np.int64)


@dataclass
class Trajectory:
    """Samples of a flow curve.

    ``potential`` holds the potential for stationary or restricted fields and
    the potential difference to the start point otherwise.
    """

    times: np.ndarray
    positions: np.ndarray
    potential: np.ndarray
    arclength: np.ndarray
    status: str
    star: int | None = None
    potential_kind: str = "difference"

    @property
    def terminal(self):
        if self.status == "captured":
            return ("captured", self.star)
        return (self.status, None)

    def __len__(self):
        return len(self.times)

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "positions": self.positions.tolist(),
            "potential": self.potential.tolist(),
            "arclength": self.arclength.tolist(),
            "status": self.status,
            "star": self.star,
            "potential_kind": self.potential_kind,
        }


def _run_one(cf, x0, direction, r_cap, t_max, rtol, h_max, max_steps, record, trap=None, max_samples=100_000):
    d = cf.dim
    n_rec = max_samples if record else 1
    rec_t = np.empty(n_rec)
    rec_x = np.empty((n_rec, d))
    rec_u = np.empty(n_rec)
    rec_l = np.empty(n_rec)
    use_trap = trap is not None
    trap = trap if use_trap else np.zeros(max(len(cf.stars), 1))
    out = _kernels.integrate_one(
        np.ascontiguousarray(x0, dtype=float), float(direction), *cf.args(),
        float(r_cap), float(t_max), float(rtol), float(h_max), int(max_steps), trap, use_trap,
        _EMPTY_MASK, 1.0, 0.0, 1, False,
        bool(record), rec_t, rec_x, rec_u, rec_l,
    )
    status, label, t, steps, xe, nrec = out
    return status, label, t, steps, xe, (rec_t[:nrec], rec_x[:nrec], rec_u[:nrec], rec_l[:nrec])


def integrate_flow(x0, field, policy=None, r_cap=R_CAP, t_max=100.0, rtol=RTOL, h_max=H_MAX,
                   max_steps=200_000, direction=1, compiled=None):
    """Integrate ``dx/dt = F(x)`` from ``x0`` with an adaptive Dormand-Prince 5(4) pair.

    Steps are clamped so that a step moves at most a tenth of the distance
    to the nearest star. Integration stops on entering ``B(star, r_cap)``,
    at ``t_max`` or on leaving the domain.

    Raises
    ------
    IntegrationError
        On step-size underflow; ``partial`` holds the trajectory so far.
    """
    cf = compiled if compiled is not None else compile_field(field, policy)
    x0 = check_vector(x0, cf.dim, "x0")
    check_positive(r_cap, "r_cap")
    _, dist = cf.nearest(x0)
    if len(cf.stars) and dist[0] < r_cap:
        raise SingularityError("start point lies within the capture radius of a star")
    status, label, t, steps, xe, rec = _run_one(cf, x0, direction, r_cap, t_max, rtol, h_max, max_steps, True)
    ts, xs, us, ls = rec
    d = cf.dim
    if cf.mode == 2 or (cf.mode in (0, 1) and d >= 5):
        kind = "restricted" if cf.mode == 2 else "stationary"
        pot = us.copy()
    else:
        kind = "difference"
        pot = us - us[0]
    traj = Trajectory(ts.copy(), xs.copy(), pot, ls.copy(), STATUS_NAMES[status],
                      int(label) if status == _kernels.STATUS_CAPTURED else None, kind)
    if status == _kernels.STATUS_UNDERFLOW:
        raise IntegrationError("step size underflow", partial=traj)
    return traj


def flow_many(starts, cf, direction=1, r_cap=R_CAP, t_max=100.0, rtol=RTOL, h_max=H_MAX,
              max_steps=200_000, trap=None, mask=None):
    """Batch integration without recording; returns (labels, status, times, steps, ends).

    ``mask`` is an optional ``(labels, n, side, lower)`` tuple of pure coarse
    cells: a trajectory entering a cell with label >= 0 stops with that label.
    """
    starts = np.ascontiguousarray(check_points(starts, cf.dim), dtype=float)
    use_trap = trap is not None
    trap_arr = np.ascontiguousarray(trap, dtype=float) if use_trap else np.zeros(max(len(cf.stars), 1))
    if mask is None:
        m_lab, mn, mside, mlower, use_mask = _EMPTY_MASK, 1, 1.0, 0.0, False
    else:
        m_lab, mn, mside, mlower = mask
        m_lab = np.ascontiguousarray(m_lab.ravel(), dtype=np.int64)
        use_mask = True
    return _kernels.integrate_batch(
        starts, float(direction), *cf.args(),
        float(r_cap), float(t_max), float(rtol), float(h_max), int(max_steps), trap_arr, use_trap,
        m_lab, float(mside), float(mlower), int(mn), use_mask,
    )


@dataclass(frozen=True)
class TimePotentialReport:
    worst_ratio: float
    holds: bool
    tolerance: float
    n_samples: int


def check_time_potential(traj, eps=1e-2):
    """Worst ratio ``L(t)^2 / (t * (U(0) - U(t)))`` over all sample prefixes."""
    t = np.asarray(traj.times)
    if len(t) < 2:
        return TimePotentialReport(0.0, True, eps, len(t))
    drop = traj.potential[0] - traj.potential[1:]
    L = traj.arclength[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(L == 0, 0.0, L**2 / (t[1:] * drop))
    ratio = np.where((L > 0) & (drop <= 0), np.inf, ratio)
    worst = float(np.max(ratio))
    return TimePotentialReport(worst, worst <= 1 + eps, eps, len(t))


# --------------------------------------------------------------------------
# capture certificates


def _fibonacci_sphere(n, d, seed=0):
    if d == 3:
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        phi = math.pi * (1 + 5**0.5) * i
        r = np.sqrt(1 - z * z)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    g = np.random.default_rng(seed).standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def trap_radii(cf, r_cap=R_CAP, n_dirs=256, margin=1.1):
    """Per-star radius inside which capture is certain.

    Inside a star-free ball the other stars' force is harmonic in each
    component, so its norm peaks on the sphere. If the star's own pull
    ``r^(1-d)`` beats ``margin`` times that peak on the sphere of radius
    ``r``, every point of the ball falls into the star.
    """
    d = cf.dim
    stars = cf.stars
    n = len(stars)
    radii = np.full(n, r_cap)
    dirs = _fibonacci_sphere(n_dirs, d)
    for j in range(n):
        z = stars[j]
        others = np.delete(stars, j, axis=0)
        if len(others):
            dv = others - z
            if cf.domain is not None and cf.domain.mode == "torus":
                dv -= cf.domain.side * np.round(dv / cf.domain.side)
            r = 0.45 * float(np.min(np.linalg.norm(dv, axis=1)))
        else:
            r = 0.45 * (cf.domain.side if cf.domain is not None else 1.0)
        while r > r_cap:
            pts = z + r * dirs
            f, _ = cf.evaluate(pts)
            own = -dirs / r ** (d - 1)
            rest = np.linalg.norm(f - own, axis=1).max()
            if 1.0 / r ** (d - 1) > margin * rest:
                radii[j] = r
                break
            r *= 0.8
    return radii


# --------------------------------------------------------------------------
# basin maps


@dataclass
class BasinMap:
    """Star labels on the vertex grid ``lower + h * i``, ``i in [0, n)^d``.

    Label ``-1`` marks a grid point whose flow did not reach a star.
    """

    labels: np.ndarray
    n: int
    side: float
    lower: float
    n_stars: int
    stats: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.labels.ndim

    @property
    def spacing(self):
        return self.side / self.n

    def coordinates(self, flat_index=None):
        idx = np.indices(self.labels.shape).reshape(self.dim, -1).T
        if flat_index is not None:
            idx = idx[flat_index]
        return self.lower + self.spacing * idx

    def counts(self):
        lab = self.labels.ravel()
        return np.bincount(lab[lab >= 0], minlength=self.n_stars)

    def volumes(self):
        return self.counts() * self.spacing**self.dim

    @property
    def timeout_fraction(self):
        return float(np.mean(self.labels < 0))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid_index", "star_index"])
            for i, s in enumerate(self.labels.ravel()):
                w.writerow([i, int(s)])

    def to_binary(self, path):
        header = json.dumps({"n": self.n, "dim": self.dim, "side": self.side, "lower": self.lower,
                             "n_stars": self.n_stars, "dtype": "int32"}).encode()
        with open(path, "wb") as fh:
            fh.write(len(header).to_bytes(4, "little"))
            fh.write(header)
            fh.write(self.labels.astype("<i4").tobytes())

    @classmethod
    def from_binary(cls, path):
        with open(path, "rb") as fh:
            size = int.from_bytes(fh.read(4), "little")
            meta = json.loads(fh.read(size))
            lab = np.frombuffer(fh.read(), dtype="<i4").astype(np.int64)
        lab = lab.reshape((meta["n"],) * meta["dim"])
        return cls(lab, meta["n"], meta["side"], meta["lower"], meta["n_stars"])


def _level_counts(labels, n_stars):
    lab = labels.ravel()
    return np.bincount(lab[lab >= 0], minlength=n_stars)


def _pure_mask(labels):
    lo = ndimage.minimum_filter(labels, size=4, mode="wrap", origin=-1)
    hi = ndimage.maximum_filter(labels, size=4, mode="wrap", origin=-1)
    return np.where((lo == hi) & (lo >= 0), labels, -1)


def _corner_labels(coarse, idx_fine):
    """Labels at the 2^d coarse corners around each fine index (periodic)."""
    nc = coarse.shape[0]
    d = coarse.ndim
    lo = idx_fine // 2
    hi = (idx_fine + 1) // 2 % nc
    out = []
    for bits in itertools.product((0, 1), repeat=d):
        sel = tuple(np.where(b, hi[:, i], lo[:, i] % nc) for i, b in enumerate(bits))
        out.append(coarse[sel])
    return np.stack(out, axis=1)


def assign_basins(field, n=None, spacing=None, policy=None, r_cap=R_CAP, t_max=200.0, rtol=RTOL,
                  levels=None, refine=False, use_traps=True, compiled=None, max_timeout=0.05):
    """Assign each vertex of an ``n^d`` grid to the star its flow reaches.

    Grids are processed coarse to fine, halving the spacing each level. A
    new vertex whose surrounding coarse corners agree inherits their label;
    the others are integrated, stopping early on entering a coarse cell whose
    4^d surrounding nodes all agree. ``refine`` re-runs fine vertices whose
    neighbors disagree at a ten times tighter tolerance.

    Raises
    ------
    QualityError
        If more than ``max_timeout`` of the points time out.
    """
    if field.domain.mode != "torus":
        raise ParameterError("basin maps need a torus domain so that every flow is captured")
    if n is None:
        if spacing is None:
            raise ParameterError("give n or spacing")
        n = int(round(field.domain.side / check_positive(spacing, "spacing")))
    n = int(n)
    d = field.dim
    side = float(field.domain.side)
    lower = field.domain.lower
    cf = compiled if compiled is not None else compile_field(field, policy)
    trap = trap_radii(cf, r_cap) if use_traps else None
    if levels is None:
        levels = 0
        while n % (2 ** (levels + 1)) == 0 and n // 2 ** (levels + 1) >= 16:
            levels += 1
    n0 = n // 2**levels
    if n0 * 2**levels != n:
        raise ParameterError("n must be divisible by 2**levels")
    stats = {"integrated": 0, "inferred": 0, "early_stops": 0, "steps": 0, "levels": levels}
    idx0 = np.indices((n0,) * d).reshape(d, -1).T
    pts = lower + (side / n0) * idx0
    lab, st, _, steps, _ = flow_many(pts, cf, 1, r_cap, t_max, rtol, trap=trap)
    lab = np.where(st == _kernels.STATUS_CAPTURED, lab, -1)
    stats["integrated"] += len(pts)
    stats["steps"] += int(steps.sum())
    labels = lab.reshape((n0,) * d)
    cur = n0
    stats["level_counts"] = {n0: _level_counts(labels, len(cf.stars))}
    for _ in range(levels):
        fine_n = 2 * cur
        fine = np.full((fine_n,) * d, -2, dtype=np.int64)
        fine[tuple(slice(0, None, 2) for _ in range(d))] = labels
        todo = np.argwhere(fine == -2)
        corners = _corner_labels(labels, todo)
        agree = np.all(corners == corners[:, :1], axis=1) & (corners[:, 0] >= 0)
        fine[tuple(todo[agree].T)] = corners[agree, 0]
        stats["inferred"] += int(agree.sum())
        run = todo[~agree]
        if len(run):
            mask = (_pure_mask(labels), cur, side, lower)
            pts = lower + (side / fine_n) * run
            lab, st, _, steps, _ = flow_many(pts, cf, 1, r_cap, t_max, rtol, trap=trap, mask=mask)
            ok = (st == _kernels.STATUS_CAPTURED) | (st == _kernels.STATUS_INFERRED)
            fine[tuple(run.T)] = np.where(ok, lab, -1)
            stats["integrated"] += len(run)
            stats["early_stops"] += int(np.sum(st == _kernels.STATUS_INFERRED))
            stats["steps"] += int(steps.sum())
        labels = fine
        cur = fine_n
        stats["level_counts"][cur] = _level_counts(labels, len(cf.stars))
    if refine:
        lo = ndimage.minimum_filter(labels, size=3, mode="wrap")
        hi = ndimage.maximum_filter(labels, size=3, mode="wrap")
        edge = np.argwhere(lo != hi)
        pts = lower + (side / n) * edge
        lab, st, _, steps, _ = flow_many(pts, cf, 1, r_cap, t_max, rtol / 10, trap=trap)
        labels[tuple(edge.T)] = np.where(st == _kernels.STATUS_CAPTURED, lab, -1)
        stats["refined"] = len(edge)
        stats["steps"] += int(steps.sum())
    bmap = BasinMap(labels, n, side, lower, len(cf.stars), stats)
    if bmap.timeout_fraction > max_timeout:
        raise QualityError(f"{bmap.timeout_fraction:.1%} of grid points timed out; raise t_max")
    return bmap


# --------------------------------------------------------------------------
# cell statistics


@dataclass(frozen=True)
class CellStats:
    star: int
    volume: float
    diameter: float
    tentacle_radius: float
    tentacle_volume: float
    y_samples: np.ndarray

    def to_json(self):
        return json.dumps({
            "star": self.star,
            "volume": self.volume,
            "diameter": self.diameter,
            "tentacle_radius": self.tentacle_radius,
            "tentacle_volume": self.tentacle_volume,
            "y_samples": self.y_samples.tolist(),
        })


def _diameter(points):
    if len(points) < 2:
        return 0.0
    try:
        hull = points[ConvexHull(points).vertices] if len(points) > points.shape[1] + 1 else points
    except QhullError:
        hull = points
    if len(hull) > 4000:
        hull = hull[np.random.default_rng(0).choice(len(hull), 4000, replace=False)]
    best = 0.0
    for i in range(0, len(hull), 512):
        dd = np.linalg.norm(hull[i:i + 512, None, :] - hull[None, :, :], axis=2)
        best = max(best, float(dd.max()))
    return best


def cell_statistics(bmap, field, star, R, n_samples=1000, seed=0):
    """Volume, diameter, R-tentacle volume and distance samples of one cell.

    Cell points are grid vertices, unwrapped around the star on a torus.
    The star itself is included when measuring the diameter, so every
    distance sample is at most the diameter.
    """
    mask = bmap.labels.ravel() == star
    if not np.any(mask):
        raise DegenerateCellError(f"cell of star {star} contains no grid points")
    z = np.asarray(field.points[star], dtype=float)
    pts = bmap.coordinates(np.flatnonzero(mask))
    rel = pts - z
    rel -= bmap.side * np.round(rel / bmap.side)
    vol_el = bmap.spacing**bmap.dim
    dist = np.linalg.norm(rel, axis=1)
    diameter = _diameter(np.vstack([rel, np.zeros(bmap.dim)]))
    tentacle = float(np.sum(dist > R)) * vol_el
    rng = rng_for(seed, star, "cell-samples")
    y = dist[rng.integers(0, len(dist), size=n_samples)]
    return CellStats(int(star), float(mask.sum() * vol_el), diameter, float(R), tentacle, y)


# --------------------------------------------------------------------------
# volume transport


def _icosphere(level):
    t = (1 + 5**0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
         (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5), (2, 4, 11),
         (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(level):
        cache = {}
        new = []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces)


def _mesh_volume(verts, faces):
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    return float(np.sum(np.einsum("ij,ij->i", a, np.cross(b, c))) / 6.0)


def _transport(cf, pts, t, direction, rtol):
    lab, st, _, _, ends = flow_many(pts, cf, direction, R_CAP, t, rtol)
    if np.any(st != _kernels.STATUS_TIMEOUT):
        raise ParameterError("a transported point reached a star or left the domain before time t")
    return ends


def liouville_ratio(ball, field, t, direction="forward", compiled=None, mesh_level=4, n_mc=400, rtol=1e-9,
                    seed=0):
    """Measured ``Vol(A_t) / Vol(A)`` for a ball ``A`` moved by the flow for time ``t``.

    In d = 3 the boundary sphere is triangulated and transported and the
    enclosed volume is measured exactly for the mesh. In other dimensions the
    Jacobian determinant of the flow map is averaged over random points.
    Forward means ``dx/dt = F``, backward ``dx/dt = -F``.
    """
    if not isinstance(ball, Ball):
        raise ParameterError("liouville_ratio needs a Ball")
    t = check_positive(t, "t", allow_zero=True)
    sign = {"forward": 1.0, "backward": -1.0}.get(direction)
    if sign is None:
        raise ParameterError("direction must be 'forward' or 'backward'")
    if t == 0:
        return 1.0
    cf = compiled if compiled is not None else compile_field(field)
    if len(field) and np.any(ball.contains(field.points)):
        raise ParameterError("the ball contains a star")
    c = np.asarray(ball.center)
    d = ball.dim
    rng = rng_for(seed, 0, "liouville")
    inner = ball.radius * rng.uniform(size=(n_mc, 1)) ** (1 / d) * _fibonacci_sphere(n_mc, d, seed)
    _transport(cf, c + inner, t, sign, rtol)
    if d == 3:
        verts, faces = _icosphere(mesh_level)
        moved = _transport(cf, c + ball.radius * verts, t, sign, rtol)
        v0 = _mesh_volume(c + ball.radius * verts - c, faces)
        v1 = _mesh_volume(moved - c, faces)
        return v1 / v0
    h = 1e-4 * ball.radius
    dets = []
    for x in c + inner[: min(n_mc, 64)]:
        stencil = np.vstack([x + h * e for e in np.eye(d)] + [x - h * e for e in np.eye(d)])
        ends = _transport(cf, stencil, t, sign, rtol)
        J = (ends[:d] - ends[d:]).T / (2 * h)
        dets.append(np.linalg.det(J))
    return float(np.mean(dets))


def capture_time_fraction(field, times, n_points=20000, seed=0, compiled=None, t_max=50.0, rtol=RTOL,
                          star=None):
    """Fraction of uniform torus points whose capture time is at least each of ``times``.

    Returns ``(fractions, standard_errors, details)``. With ``star`` set,
    only points captured by that star count, relative to that cell.
    """
    if field.domain.mode != "torus":
        raise ParameterError("capture-time sampling needs a torus domain")
    cf = compiled if compiled is not None else compile_field(field)
    rng = rng_for(seed, 0, "capture-times")
    dom = field.domain
    pts = dom.lower + dom.side * rng.uniform(size=(n_points, field.dim))
    _, dist = cf.nearest(pts)
    pts = pts[dist > 2 * R_CAP]
    lab, st, tt, _, _ = flow_many(pts, cf, 1, R_CAP, t_max, rtol)
    if np.any(st != _kernels.STATUS_CAPTURED):
        raise QualityError("some sample points were not captured; raise t_max")
    sel = np.ones(len(lab), bool) if star is None else lab == star
    tt = tt[sel]
    times = np.atleast_1d(np.asarray(times, dtype=float))
    frac = np.array([np.mean(tt >= s) for s in times])
    se = np.sqrt(frac * (1 - frac) / max(len(tt), 1))
    return frac, se, {"n": int(len(tt)), "labels": lab, "times": tt}
