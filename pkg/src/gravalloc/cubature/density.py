"""Density of normalized moment sums of uniform points near the origin."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .._validation import ParameterError
from .moments import monomials, multi_indices, polydim

__all__ = ["MAX_KDE_DIM", "uniform_cube_moments", "sample_moment_sums", "DensityEstimate", "empirical_density_check"]

# kernel density estimation at a point needs roughly h^-p samples per unit of precision
MAX_KDE_DIM = 4


def uniform_cube_moments(alphas):
    """``E X^a`` for ``X`` uniform on ``[-1, 1]^d``."""
    alphas = np.asarray(alphas)
    even = np.all(alphas % 2 == 0, axis=1)
    return np.where(even, np.prod(1.0 / (alphas + 1.0), axis=1), 0.0)


def sample_moment_sums(n, k, d, replicas, rng, chunk=2_000_000):
    """Replicas of ``n^(-1/2) sum_i (M_i - E M_1)`` with ``M_i`` the moment vector of a uniform point."""
    alphas = multi_indices(d, k)
    mean = uniform_cube_moments(alphas)
    out = np.empty((replicas, len(alphas)))
    per = max(1, chunk // (n * d))
    for start in range(0, replicas, per):
        stop = min(replicas, start + per)
        X = rng.uniform(-1.0, 1.0, size=((stop - start) * n, d))
        M = monomials(X, alphas).reshape(stop - start, n, len(alphas))
        out[start:stop] = (M.sum(axis=1) - n * mean) / math.sqrt(n)
    return out


@dataclass(frozen=True)
class DensityEstimate:
    value: float
    lower: float
    confidence: float
    bandwidth: np.ndarray
    n: int
    k: int
    d: int
    replicas: int
    samples: np.ndarray

    def density_at(self, x):
        """Gaussian kernel density estimate at the rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.array([_kernel_values(self.samples, xi, self.bandwidth).mean() for xi in x])


def _kernel_values(samples, x, bandwidth):
    z = (samples - x) / bandwidth
    p = samples.shape[1]
    norm = (2 * math.pi) ** (-p / 2) / np.prod(bandwidth)
    return norm * np.exp(-0.5 * (z * z).sum(axis=1))


def empirical_density_check(n, k, d, replicas, seed=0, confidence=0.95, n_boot=999):
    """Kernel density of the normalized moment sum at 0 with a one-sided bootstrap lower bound.

    The bandwidth is Scott's rule per coordinate, held fixed under resampling; the
    lower bound is the percentile bound of the resampled kernel means.

    Raises
    ------
    ParameterError
        ``polydim(k, d)`` above ``MAX_KDE_DIM``, or ``n`` or ``replicas`` too small.
    """
    p = polydim(k, d)
    if p > MAX_KDE_DIM:
        raise ParameterError(f"polydim({k},{d}) = {p} is too large for kernel density estimation")
    if n < 2 or replicas < 100:
        raise ParameterError("need n >= 2 and at least 100 replicas")
    rng = np.random.default_rng(seed)
    S = sample_moment_sums(n, k, d, replicas, rng)
    bw = S.std(axis=0, ddof=1) * replicas ** (-1.0 / (p + 4))
    vals = _kernel_values(S, np.zeros(p), bw)
    res = stats.bootstrap((vals,), np.mean, confidence_level=confidence, n_resamples=n_boot,
                          method="percentile", alternative="greater", random_state=rng)
    return DensityEstimate(float(vals.mean()), float(res.confidence_interval.low), confidence, bw,
                           n, k, d, replicas, S)
