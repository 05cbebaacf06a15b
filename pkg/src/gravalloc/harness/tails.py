"""Monte Carlo exceedance tables for force and potential statistics of Poisson stars in an annulus.

Stars are a unit-intensity Poisson process in ``A = {q <= |z| <= p}``. For a
probe ``x`` in the hole ``|x| < q`` the background integrals cancel by the shell
theorem, so ``F(x|A) = sum_z g(z - x)`` and potential differences are plain
star sums. Thresholds whose exceedance count is too small to estimate are
censored: reported, never asserted.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .._validation import ParameterError, check_dim, check_positive
from ..pointfield import kappa, rng_for, sphere_area

__all__ = [
    "STATISTICS",
    "TailSpec",
    "TailRow",
    "TailTable",
    "TailFit",
    "sample_statistic",
    "mc_tail",
    "fit_tail_form",
    "check_tail_bound",
]

STATISTICS = ("force_norm", "max_ball_force", "potential", "potential_diff")


@dataclass(frozen=True)
class TailSpec:
    """Statistic of the stars in the annulus ``q <= |z| <= p`` in dimension ``dim``.

    ``force_norm``: ``|F(0|A)|``. ``max_ball_force``: max of ``|F(x|A)|`` over
    ``n_probes`` points of the ball of radius ``probe_radius``. ``potential``:
    ``|U(0|A)|`` (needs ``dim >= 5``). ``potential_diff``: ``|U(x) - U(0)|`` at
    ``x = probe_radius e_1``.
    """

    statistic: str = "force_norm"
    dim: int = 3
    q: float = 2.0
    p: float = 10.0
    probe_radius: float = 0.5
    n_probes: int = 16

    def __post_init__(self):
        check_dim(self.dim)
        check_positive(self.q, "q")
        if not self.p > self.q:
            raise ParameterError("need p > q")
        if self.statistic not in STATISTICS:
            raise ParameterError(f"statistic must be one of {STATISTICS}")
        if self.statistic == "potential" and self.dim < 5:
            raise ParameterError("the stationary potential needs dim >= 5")
        if self.statistic in ("max_ball_force", "potential_diff") and not 0 < self.probe_radius < self.q:
            raise ParameterError("probe_radius must lie in (0, q)")

    @property
    def volume(self):
        return kappa(self.dim) * (self.p**self.dim - self.q**self.dim)

    def probes(self):
        d = self.dim
        if self.statistic == "force_norm" or self.statistic == "potential":
            return np.zeros((1, d))
        if self.statistic == "potential_diff":
            x = np.zeros((1, d))
            x[0, 0] = self.probe_radius
            return x
        # origin plus a deterministic spread over the ball
        rng = np.random.default_rng(0)
        u = rng.standard_normal((self.n_probes - 1, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = self.probe_radius * rng.uniform(0, 1, self.n_probes - 1) ** (1.0 / d)
        return np.vstack([np.zeros(d), u * r[:, None]])


def _annulus_points(rng, counts, spec):
    n = int(counts.sum())
    d = spec.dim
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = (spec.q**d + rng.uniform(0, 1, n) * (spec.p**d - spec.q**d)) ** (1.0 / d)
    return u * r[:, None]


def _chunk_statistic(spec, counts, pts, probes):
    d = spec.dim
    owner = np.repeat(np.arange(len(counts)), counts)
    out = np.zeros(len(counts))
    if spec.statistic in ("force_norm", "max_ball_force"):
        for x in probes:
            z = pts - x
            g = z / (np.einsum("ij,ij->i", z, z) ** (d / 2))[:, None]
            F = np.stack([np.bincount(owner, g[:, j], len(counts)) for j in range(d)], axis=1)
            out = np.maximum(out, np.linalg.norm(F, axis=1))
        return out
    r0 = np.linalg.norm(pts, axis=1)
    if spec.statistic == "potential":
        mean = sphere_area(d - 1) * (spec.p**2 - spec.q**2) / (2 * (d - 2))
        return np.abs(np.bincount(owner, r0 ** (2 - d), len(counts)) / (d - 2) - mean)
    r1 = np.linalg.norm(pts - probes[0], axis=1)
    return np.abs(np.bincount(owner, r0 ** (2 - d) - r1 ** (2 - d), len(counts))) / (d - 2)


def sample_statistic(spec, replicas, seed=0, chunk=256):
    """Independent draws of the statistic; chunk ``i`` uses the generator keyed by ``(seed, i)``.

    The output does not depend on how chunks are scheduled.
    """
    if replicas < 1:
        raise ParameterError("replicas must be >= 1")
    probes = spec.probes()
    out = np.empty(replicas)
    for i, start in enumerate(range(0, replicas, chunk)):
        stop = min(replicas, start + chunk)
        rng = rng_for(seed, i, "tail:" + spec.statistic)
        counts = rng.poisson(spec.volume, stop - start)
        pts = _annulus_points(rng, counts, spec)
        out[start:stop] = _chunk_statistic(spec, counts, pts, probes)
    return out


@dataclass(frozen=True)
class TailRow:
    threshold: float
    exceed: int
    n: int
    p_hat: float
    lower: float
    upper: float
    censored: bool


@dataclass
class TailTable:
    spec: TailSpec
    rows: list
    seed: int
    confidence: float
    min_count: int
    samples: np.ndarray = field(repr=False, default=None)

    def uncensored(self):
        return [r for r in self.rows if not r.censored]

    def to_dict(self):
        return {"spec": asdict(self.spec), "seed": self.seed, "confidence": self.confidence,
                "min_count": self.min_count, "rows": [asdict(r) for r in self.rows]}


def _wilson(k, n, confidence):
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def mc_tail(spec, thresholds, replicas, seed=0, confidence=0.95, min_count=10, samples=None):
    """Empirical ``P(statistic > t)`` with Wilson intervals.

    Rows with fewer than ``min_count`` exceedances are marked censored.
    """
    if samples is None:
        samples = sample_statistic(spec, replicas, seed)
    n = len(samples)
    rows = []
    for t in np.atleast_1d(thresholds):
        k = int(np.count_nonzero(samples > t))
        lo, hi = _wilson(k, n, confidence)
        rows.append(TailRow(float(t), k, n, k / n, lo, hi, k < min_count))
    return TailTable(spec, rows, seed, confidence, min_count, samples)


@dataclass(frozen=True)
class TailFit:
    """``log P = log_c0 - rate q^(d-2) t^2`` fitted on uncensored rows."""

    rate: float
    log_c0: float
    r2: float
    slope: float
    n_rows: int
    margin: float

    def bound(self, t, q, d):
        return math.exp(self.log_c0 - self.rate * q ** (d - 2) * t * t)


def fit_tail_form(table, margin=1.5, t_min=0.0):
    """Least-squares fit of ``log p_hat`` against ``t^2`` over uncensored rows with ``t >= t_min``.

    ``log_c0`` is then raised so the fitted curve times ``margin`` dominates
    every fitted row, giving a one-sided envelope for use on an independent run.

    Raises
    ------
    ParameterError
        Fewer than three usable rows.
    """
    rows = [r for r in table.uncensored() if r.threshold >= t_min and r.exceed > 0]
    if len(rows) < 3:
        raise ParameterError("need at least three uncensored thresholds to fit")
    t2 = np.array([r.threshold**2 for r in rows])
    lp = np.log([r.p_hat for r in rows])
    res = stats.linregress(t2, lp)
    q, d = table.spec.q, table.spec.dim
    rate = -res.slope / q ** (d - 2)
    log_c0 = float(np.max(lp + rate * q ** (d - 2) * t2)) + math.log(margin)
    return TailFit(float(rate), log_c0, float(res.rvalue**2), float(res.slope), len(rows), margin)


def check_tail_bound(table, fit):
    """Per uncensored row: is the Wilson lower limit at most the fitted bound?

    Returns a list of ``(threshold, lower, bound, ok)``. Censored rows are skipped.
    """
    q, d = table.spec.q, table.spec.dim
    out = []
    for r in table.uncensored():
        b = fit.bound(r.threshold, q, d)
        out.append((r.threshold, r.lower, b, r.lower <= b))
    return out
