"""Partition of ``V+ minus 2 V0`` into grid cubes dominated by the central box ``V0``.

Boxes are ``Box(L, W) = {|x_1| <= L, |x_i| <= W for i >= 2}``. With
``p1 = ceil(log2 R)`` and ``p2 = ceil(eps log2 R)``, ``V0 = Box(2^p1, 2^(2 p2))``
and ``V+ = Box(2^(p1+1), 2^(p1+1))``. Shell ``i`` lies between
``Box(2^(p1+1), s_i)`` and ``Box(2^(p1+1), s_(i+1))`` with ``s_i = 2^(2 p2 + i)``
and is tiled by the cubes of the grid of side ``a_i = 2^(p2 + i - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._validation import ParameterError, check_dim, check_positive

__all__ = ["DEFAULT_A", "DominatedBoxes", "partition_dominated_boxes", "farthest_distance", "is_dominated"]

DEFAULT_A = 4


def _log2_ceil(x):
    p = math.ceil(math.log2(x))
    # guard the float log against exact powers of two
    if 2 ** (p - 1) >= x:
        p -= 1
    return p


def farthest_distance(y, half_lengths):
    """``max_{x in V} |x - y|`` for the axis-aligned box ``V`` centered at 0 with the given half lengths."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return np.sqrt(((np.abs(y) + np.asarray(half_lengths, dtype=float)) ** 2).sum(axis=1))


def is_dominated(centers, sides, v0_half, p2, A=DEFAULT_A):
    """Integer side ``a`` with ``A <= a <= 2^(-p2) * farthest_distance(center, V0)``."""
    sides = np.asarray(sides, dtype=float)
    integer = sides == np.round(sides)
    return integer & (sides >= A) & (sides <= 2.0 ** (-p2) * farthest_distance(centers, v0_half))


@dataclass(frozen=True)
class DominatedBoxes:
    R: float
    eps: float
    dim: int
    p1: int
    p2: int
    A: float
    centers: np.ndarray
    sides: np.ndarray
    shells: np.ndarray

    @property
    def count(self):
        return len(self.sides)

    @property
    def v0_half(self):
        return np.array([2.0 ** self.p1] + [2.0 ** (2 * self.p2)] * (self.dim - 1))

    @property
    def vplus_half(self):
        return np.full(self.dim, 2.0 ** (self.p1 + 1))

    @property
    def count_bound(self):
        """``2^(3d) R^(1 + (d-2) eps)``."""
        return 2.0 ** (3 * self.dim) * self.R ** (1 + (self.dim - 2) * self.eps)

    def dominated(self, A=None):
        return is_dominated(self.centers, self.sides, self.v0_half, self.p2, self.A if A is None else A)

    def check_tiling(self):
        """Certificate that the cubes tile ``V+ minus 2 V0`` up to boundaries.

        Every cube lies in ``V+`` and outside the interior of ``2 V0``; cubes of one
        shell are distinct cells of one grid and shells are disjoint, so cubes only
        meet on boundaries; the integer volume sum equals the target volume.
        """
        d = self.dim
        lo = self.centers - self.sides[:, None] / 2
        hi = self.centers + self.sides[:, None] / 2
        inside = bool(np.all(lo >= -self.vplus_half) and np.all(hi <= self.vplus_half))
        inner = 2 * self.v0_half
        # a cube avoids the open inner box iff it is separated along some axis
        separated = np.any((hi <= -inner) | (lo >= inner), axis=1)
        distinct = True
        for shell in np.unique(self.shells):
            sel = self.shells == shell
            a = self.sides[sel][0]
            idx = np.floor(lo[sel] / a).astype(np.int64)
            distinct &= len(np.unique(idx, axis=0)) == int(sel.sum())
            distinct &= bool(np.all(self.sides[sel] == a))
        vol = int(np.sum(np.round(self.sides).astype(object) ** d))
        target = int(np.prod([int(2 * h) for h in self.vplus_half], dtype=object)
                     - np.prod([int(2 * h) for h in inner], dtype=object))
        return {
            "inside_outer": inside,
            "outside_inner": bool(separated.all()),
            "distinct_cells": bool(distinct),
            "volume": vol,
            "target_volume": target,
            "exact": inside and bool(separated.all()) and bool(distinct) and vol == target,
        }


def partition_dominated_boxes(R, eps, dim=3, A=DEFAULT_A, strict=False, max_count=5_000_000):
    """Grid cubes tiling ``V+ minus 2 V0`` shell by shell.

    Parameters
    ----------
    R : float
        Scale, ``R > 1``.
    eps : float
        ``0 < eps < 1 / (2 (d - 2))``.
    A : float
        Minimum side length in the domination predicate.
    strict : bool
        Raise when some cube violates the predicate or the count bound, instead of
        returning the construction for inspection.

    Raises
    ------
    ParameterError
        Infeasible parameters (no shell, or too many cubes to enumerate), or a
        predicate/count violation when ``strict``.
    """
    d = check_dim(dim)
    R = check_positive(R, "R")
    eps = check_positive(eps, "eps")
    if R <= 1:
        raise ParameterError("R must exceed 1")
    if eps >= 1.0 / (2 * (d - 2)):
        raise ParameterError(f"eps must be below 1/(2(d-2)) = {1 / (2 * (d - 2)):.4g}")
    p1 = _log2_ceil(R)
    p2 = _log2_ceil(R ** eps)
    n_shells = p1 - 2 * p2
    if n_shells < 1:
        raise ParameterError(f"R = {R} too small for eps = {eps}: p1 - 2 p2 = {n_shells} < 1")
    full = 2 ** (p1 + 1)
    total = 0
    for i in range(1, n_shells + 1):
        a = 2 ** (p2 + i - 1)
        m_out, m_in = 2 * 2 ** (2 * p2 + i + 1) // a, 2 * 2 ** (2 * p2 + i) // a
        total += (2 * full // a) * (m_out ** (d - 1) - m_in ** (d - 1))
    if total > max_count:
        raise ParameterError(f"{total} cubes exceed the enumeration limit {max_count}")
    centers, sides, shells = [], [], []
    for i in range(1, n_shells + 1):
        a = 2 ** (p2 + i - 1)
        s_in, s_out = 2 ** (2 * p2 + i), 2 ** (2 * p2 + i + 1)
        axial = -full + a * (np.arange(2 * full // a) + 0.5)
        trans = -s_out + a * (np.arange(2 * s_out // a) + 0.5)
        grid = np.stack(np.meshgrid(*([trans] * (d - 1)), indexing="ij"), -1).reshape(-1, d - 1)
        grid = grid[np.any(np.abs(grid) > s_in, axis=1)]
        c = np.empty((len(axial) * len(grid), d))
        c[:, 0] = np.repeat(axial, len(grid))
        c[:, 1:] = np.tile(grid, (len(axial), 1))
        centers.append(c)
        sides.append(np.full(len(c), float(a)))
        shells.append(np.full(len(c), i, dtype=np.int64))
    out = DominatedBoxes(float(R), float(eps), d, p1, p2, float(A),
                         np.vstack(centers), np.concatenate(sides), np.concatenate(shells))
    if strict:
        bad = int((~out.dominated()).sum())
        if bad:
            raise ParameterError(f"{bad} cubes fail the domination predicate with A = {A}")
        if out.count > out.count_bound:
            raise ParameterError(f"{out.count} cubes exceed the bound {out.count_bound:.6g}")
    return out
