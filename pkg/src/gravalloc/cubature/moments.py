"""Multi-indices, moment maps and the m0 threshold."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .._validation import ParameterError, check_positive

__all__ = ["multi_indices", "polydim", "MomentVector", "moment_map", "moment_matrix", "m0", "monomials"]


def _compositions(total, parts):
    """Exponent tuples of a fixed degree, highest power of the first variable first."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@functools.lru_cache(maxsize=128)
def multi_indices(d, k, include_zero=False):
    """Multi-indices ``0 < |a| <= k`` (or ``0 <= |a|``) in graded lexicographic order."""
    if k < 0 or d < 1:
        raise ParameterError("need k >= 0 and d >= 1")
    start = 0 if include_zero else 1
    rows = [c for deg in range(start, k + 1) for c in _compositions(deg, d)]
    out = np.array(rows, dtype=np.int64).reshape(-1, d)
    out.setflags(write=False)
    return out


def polydim(k, d):
    return math.comb(k + d, d) - 1


def monomials(X, alphas):
    """Evaluate ``x^a`` for every row of ``X`` and every multi-index; shape (n, len(alphas))."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    kmax = int(alphas.max()) if alphas.size else 0
    powers = np.ones((kmax + 1,) + X.shape)
    for p in range(1, kmax + 1):
        powers[p] = powers[p - 1] * X
    out = np.ones((X.shape[0], len(alphas)))
    for i in range(X.shape[1]):
        out *= powers[alphas[:, i], :, i].T
    return out


@dataclass(frozen=True)
class MomentVector:
    entries: np.ndarray
    k: int
    d: int

    def __len__(self):
        return len(self.entries)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def moment_map(x, k):
    """All monomials ``x^a`` with ``0 < |a| <= k`` in graded lexicographic order."""
    x = np.asarray(x, dtype=float)
    if int(k) != k or k < 1:
        raise ParameterError("k must be an integer >= 1")
    if x.ndim != 1:
        raise ParameterError("moment_map takes a single vector; use moment_matrix for batches")
    alphas = multi_indices(len(x), int(k))
    return MomentVector(monomials(x[None, :], alphas)[0], int(k), len(x))


def moment_matrix(X, k):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return monomials(X, multi_indices(X.shape[1], int(k)))


def m0(d, k, delta):
    """Least ``m >= 1`` with ``(k e / (m + 1))^(m + 1) <= delta / (2 d 2^k)``."""
    delta = check_positive(delta, "delta")
    rhs = math.log(delta) - math.log(2 * d) - k * math.log(2)
    m = 1
    while (m + 1) * (math.log(k * math.e) - math.log(m + 1)) > rhs:
        m += 1
    return m
