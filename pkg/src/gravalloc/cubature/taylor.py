"""Taylor expansion of the kernel ``g(z) = z / |z|^d`` and the moment-to-force implication."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from .._validation import ParameterError, check_points, check_positive, check_vector
from .moments import monomials, multi_indices, polydim

__all__ = [
    "TaylorRangeError",
    "TaylorModel",
    "taylor_coefficients",
    "taylor_model",
    "taylor_eval",
    "taylor_remainder_bound",
    "coefficient_ratios",
    "remainder_ratios",
    "fit_c20",
    "UniformBallLaw",
    "QuadratureLaw",
    "ForceEventReport",
    "check_force_approx_event",
]


class TaylorRangeError(ParameterError):
    """Evaluation point outside the certified radius ``|y| / C20``."""


@functools.lru_cache(maxsize=32)
def _shift_table(d, k):
    """``table[i, j]`` is the index of ``alpha_i + e_j`` (or of ``alpha_i + 2 e_(j-d)``), -1 past degree ``k``."""
    alphas = multi_indices(d, k, include_zero=True)
    index = {tuple(a): i for i, a in enumerate(alphas)}
    table = np.full((len(alphas), 2 * d), -1, dtype=np.int64)
    for i, a in enumerate(alphas):
        for j in range(d):
            for step, col in ((1, j), (2, d + j)):
                b = list(a)
                b[j] += step
                table[i, col] = index.get(tuple(b), -1)
    table.setflags(write=False)
    return table


def _shift_add(out, p, table, col, coef):
    """``out += coef * w_col * p`` for the shift in column ``col``; ``coef`` broadcasts over the batch."""
    tgt = table[:, col]
    ok = tgt >= 0
    out[:, tgt[ok]] += coef[:, None] * p[:, ok]


def taylor_coefficients(y, k):
    """Coefficients ``a_a`` of ``g`` around each row of ``y`` for ``|a| <= k``.

    Computed as a truncated power series: with ``u = w / |y|`` and ``e = y / |y|``,
    ``g(y + w) = |y|^(1-d) (e + u) (1 + 2 e.u + |u|^2)^(-d/2)``, and the binomial
    series of the last factor is summed by Horner's rule in the quadratic ``s(u)``.

    Returns
    -------
    alphas : ndarray (P, d)
        Multi-indices ``0 <= |a| <= k`` in graded lexicographic order.
    coef : ndarray (n, P, d)
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, d = y.shape
    norm = np.linalg.norm(y, axis=1)
    if np.any(norm == 0):
        raise ParameterError("expansion center must be nonzero")
    e = y / norm[:, None]
    alphas = multi_indices(d, k, include_zero=True)
    table = _shift_table(d, k)
    P = len(alphas)
    binom = np.cumprod([1.0] + [(-d / 2.0 - i) / (i + 1) for i in range(k)])
    # Horner: p <- binom[m] + s * p, where s = 2 e.u + |u|^2
    p = np.zeros((n, P))
    p[:, 0] = binom[k]
    twos = 2 * e
    ones = np.ones(n)
    for m in range(k - 1, -1, -1):
        nxt = np.zeros((n, P))
        nxt[:, 0] = binom[m]
        for j in range(d):
            _shift_add(nxt, p, table, j, twos[:, j])
            _shift_add(nxt, p, table, d + j, ones)
        p = nxt
    coef = e[:, None, :] * p[:, :, None]
    for j in range(d):
        tgt = table[:, j]
        ok = tgt >= 0
        coef[:, tgt[ok], j] += p[:, ok]
    deg = alphas.sum(axis=1)
    scale = norm[:, None] ** (1.0 - d - deg[None, :])
    return alphas, coef * scale[:, :, None]


@dataclass(frozen=True)
class TaylorModel:
    """Degree-``k`` expansion of ``g`` about ``center`` with the constant used for its bounds."""

    center: np.ndarray
    k: int
    alphas: np.ndarray
    coefficients: np.ndarray
    c20: float

    @property
    def dim(self):
        return len(self.center)

    @property
    def radius(self):
        """Largest certified ``|z - y|``."""
        return float(np.linalg.norm(self.center)) / self.c20

    def coefficient_bound(self):
        """Per-index bound ``C20 |y|^(1-d) (2d/|y|)^|a|``."""
        ny = float(np.linalg.norm(self.center))
        d = self.dim
        return self.c20 * ny ** (1 - d) * (2 * d / ny) ** self.alphas.sum(axis=1)


def taylor_model(y, k, c20=None):
    """Taylor model of ``g`` about ``y`` up to total degree ``k``.

    ``c20`` defaults to the fitted constant of :func:`fit_c20` for this dimension.
    """
    y = check_vector(y, name="y")
    if y.size < 1 or not np.any(y):
        raise ParameterError("expansion center must be nonzero")
    if int(k) != k or k < 0:
        raise ParameterError("k must be a nonnegative integer")
    k = int(k)
    alphas, coef = taylor_coefficients(y, k)
    c = fit_c20(len(y)) if c20 is None else check_positive(c20, "c20")
    return TaylorModel(y.copy(), k, alphas, coef[0], float(c))


def _offsets(model, z, check):
    z = check_points(z, model.dim, "z")
    w = z - model.center
    dist = np.linalg.norm(w, axis=1)
    if check and np.any(dist > model.radius * (1 + 1e-12)):
        raise TaylorRangeError(
            f"|z - y| = {dist.max():.4g} exceeds the certified radius {model.radius:.4g}")
    return w, dist


def taylor_eval(model, z, check=True):
    """Evaluate the expansion at ``z`` (one point or rows of points)."""
    single = np.ndim(z) == 1
    w, _ = _offsets(model, z, check)
    out = monomials(w, model.alphas) @ model.coefficients
    return out[0] if single else out


def taylor_remainder_bound(model, z, check=True):
    """``C20 max(k,1)^d |y|^(1-d) (2d|z-y|/|y|)^(k+1)``."""
    single = np.ndim(z) == 1
    _, dist = _offsets(model, z, check)
    d = model.dim
    ny = float(np.linalg.norm(model.center))
    out = model.c20 * max(model.k, 1) ** d * ny ** (1 - d) * (2 * d * dist / ny) ** (model.k + 1)
    return float(out[0]) if single else out


def _g(x):
    x = np.atleast_2d(x)
    r = np.linalg.norm(x, axis=1)
    return x / r[:, None] ** x.shape[1]


def coefficient_ratios(directions, k):
    """``max_a |a_a| |y|^(d-1) (|y|/2d)^|a|`` per direction (scale-free)."""
    directions = np.atleast_2d(directions)
    d = directions.shape[1]
    alphas, coef = taylor_coefficients(directions / np.linalg.norm(directions, axis=1)[:, None], k)
    return (np.linalg.norm(coef, axis=2) * (2.0 * d) ** (-alphas.sum(axis=1))).max(axis=1)


def remainder_ratios(y, z, k):
    """``|g(z) - T_k(z)| / (max(k,1)^d |y|^(1-d) (2d|z-y|/|y|)^(k+1))`` for paired rows."""
    y = np.atleast_2d(y)
    z = np.atleast_2d(z)
    d = y.shape[1]
    alphas, coef = taylor_coefficients(y, k)
    w = z - y
    approx = np.einsum("np,npj->nj", monomials(w, alphas), coef)
    err = np.linalg.norm(_g(z) - approx, axis=1)
    ny = np.linalg.norm(y, axis=1)
    scale = max(k, 1) ** d * ny ** (1 - d) * (2 * d * np.linalg.norm(w, axis=1) / ny) ** (k + 1)
    return err / scale


def _sphere_samples(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1)[:, None]


@functools.lru_cache(maxsize=16)
def fit_c20(d, k_max=6, n_dirs=2000, margin=1.5, seed=20):
    """Smallest constant making both Taylor bounds hold on a calibration sample, times ``margin``.

    The coefficient ratio is scale free, so it is sampled over directions. The
    remainder ratio is sampled with ``|z - y|`` up to ``|y| / C``, and ``C`` is
    raised until it dominates both ratios on its own certified radius.
    """
    rng = np.random.default_rng(seed)
    dirs = np.vstack([np.eye(d), np.ones((1, d)) / math.sqrt(d), _sphere_samples(rng, n_dirs, d)])
    coef = float(coefficient_ratios(dirs, k_max).max())
    offsets = _sphere_samples(rng, len(dirs), d)
    frac = rng.uniform(0.0, 1.0, len(dirs)) ** (1.0 / d)
    frac[: len(frac) // 4] = 1.0

    alphas, coefs = taylor_coefficients(dirs, k_max)
    deg = alphas.sum(axis=1)

    def remainder_sup(c):
        w = offsets * (frac / c)[:, None]
        terms = monomials(w, alphas)[:, :, None] * coefs
        partial = np.cumsum(np.stack([terms[:, deg == j].sum(axis=1) for j in range(k_max + 1)]), axis=0)
        err = np.linalg.norm(_g(dirs + w)[None] - partial, axis=2)
        ks = np.arange(k_max + 1)
        scale = np.maximum(ks, 1)[:, None] ** d * (2 * d * frac[None, :] / c) ** (ks[:, None] + 1)
        return float((err / scale).max())

    # the remainder sup shrinks as the radius |y|/C shrinks: bisect for the smallest self-consistent C
    lo, hi = 1.0, 64.0
    if remainder_sup(hi) > hi:
        raise ParameterError(f"no self-consistent constant below {hi} in dimension {d}")
    for _ in range(40):
        mid = math.sqrt(lo * hi)
        if max(coef, remainder_sup(mid)) <= mid:
            hi = mid
        else:
            lo = mid
    c = max(hi, coef)
    return margin * c


# --------------------------------------------------------------------------
# moment deviation implies force deviation


@dataclass(frozen=True)
class UniformBallLaw:
    """Uniform law on the ball ``B(center, radius)``."""

    center: np.ndarray
    radius: float

    @property
    def support_radius(self):
        return float(self.radius)

    def moments(self, alphas, y):
        """``E (Y - y)^a`` via the binomial shift of centered ball moments."""
        d = len(self.center)
        k = int(alphas.sum(axis=1).max())
        base = multi_indices(d, k, include_zero=True)
        central = np.zeros(len(base))
        kappa = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
        for i, b in enumerate(base):
            if np.any(b % 2):
                continue
            s = int(b.sum())
            num = 2 * np.prod([math.gamma((bi + 1) / 2) for bi in b])
            central[i] = num / math.gamma((s + d) / 2) / (s + d) / kappa * self.radius ** s
        shift = np.asarray(self.center, dtype=float) - np.asarray(y, dtype=float)
        index = {tuple(b): i for i, b in enumerate(base)}
        out = np.zeros(len(alphas))
        for i, a in enumerate(alphas):
            ranges = [range(ai + 1) for ai in a]
            for b in np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, d):
                coef = np.prod([math.comb(int(ai), int(bi)) for ai, bi in zip(a, b)])
                out[i] += coef * central[index[tuple(b)]] * np.prod(shift ** (a - b))
        return out

    def mean_kernel(self, x):
        """``E g(Y - x)`` for ``x`` outside the ball (shell theorem)."""
        return _g(np.asarray(self.center)[None, :] - np.atleast_2d(x))

    def sample(self, n, rng):
        d = len(self.center)
        u = _sphere_samples(rng, n, d) * rng.uniform(0, 1, n)[:, None] ** (1.0 / d)
        return np.asarray(self.center) + self.radius * u


@dataclass(frozen=True)
class QuadratureLaw:
    """Law given by weighted nodes (for example a dense quadrature of a surface measure)."""

    nodes: np.ndarray
    weights: np.ndarray
    center: np.ndarray

    @property
    def support_radius(self):
        return float(np.linalg.norm(self.nodes - self.center, axis=1).max())

    def moments(self, alphas, y):
        w = self.weights / self.weights.sum()
        return w @ monomials(self.nodes - y, alphas)

    def mean_kernel(self, x):
        w = self.weights / self.weights.sum()
        x = np.atleast_2d(x)
        out = np.zeros_like(x)
        for i, xi in enumerate(x):
            out[i] = w @ _g(self.nodes - xi)
        return out


@dataclass(frozen=True)
class ForceEventReport:
    status: str  # "ok" or "inconclusive"
    omega: bool
    event: bool
    moment_deviation: float
    omega_threshold: float
    force_deviation: float
    t: float
    r: float
    rho: float
    c20: float
    reason: str = ""

    @property
    def implication_holds(self):
        return (not self.omega) or self.event


def check_force_approx_event(points, y, r, t, k, law, c20=None, n_probe=512, radii=(1.0, 1.25, 2.0)):
    """Evaluate the moment event and the force event for points drawn near ``y``.

    The moment event bounds ``|sum_j M_j - E sum_j M_j|`` with ``M_j`` the degree-``k``
    moment vector of ``Y_j - y``; the force event bounds
    ``max_{|x-y| >= r} |sum_j g(Y_j - x) - E sum_j g(Y_j - x)|`` by ``t``. The
    force deviation is a field of sources inside ``B(y, rho)``, so its norm is
    subharmonic outside and vanishes at infinity; the maximum is probed on
    spheres starting at radius ``r``.

    Returns an inconclusive report when the radius or threshold preconditions fail.
    """
    y = check_vector(y, name="y")
    d = len(y)
    Y = check_points(points, d, "points")
    r = check_positive(r, "r")
    t = check_positive(t, "t")
    n = len(Y)
    c = fit_c20(d) if c20 is None else float(c20)
    rho = law.support_radius
    alphas = multi_indices(d, k)
    dev = np.linalg.norm(monomials(Y - y, alphas).sum(axis=0) - n * law.moments(alphas, y))
    c30 = 0.99 / (3 * c)
    thr = c30 * t * r ** (d - 1) / math.sqrt(polydim(k, d)) * (r / (2 * d + r)) ** k
    omega = bool(dev <= thr)
    from ..flow import _fibonacci_sphere

    sphere = _fibonacci_sphere(n_probe, d)
    probes = np.vstack([y + rad * r * sphere for rad in radii])
    emp = np.zeros_like(probes)
    for j in range(n):
        emp += _g(Y[j] - probes)
    force_dev = float(np.linalg.norm(emp - n * law.mean_kernel(probes), axis=1).max())
    event = bool(force_dev <= t)
    reason = ""
    if not r > c * rho:
        reason = f"r = {r:.4g} does not exceed C20 * rho = {c * rho:.4g}"
    else:
        t_min = 3 * c * n * max(k, 1) ** d / r ** (d - 1) * (2 * d * rho / r) ** (k + 1)
        if not t > t_min:
            reason = f"t = {t:.4g} does not exceed {t_min:.4g}"
    return ForceEventReport("inconclusive" if reason else "ok", omega, event, float(dev), float(thr),
                            force_dev, t, r, rho, c, reason)
