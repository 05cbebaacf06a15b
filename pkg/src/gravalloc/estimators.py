"""Scikit-learn style wrapper: fit on star positions, predict the star each query point flows to."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import _kernels
from .flow import R_CAP, RTOL, assign_basins, compile_field, flow_many, trap_radii
from .pointfield import DomainSpec, StarField

__all__ = ["GravitationalAllocation"]


class GravitationalAllocation(ClusterMixin, BaseEstimator):
    """Allocation of a periodic box to the stars it contains.

    Parameters
    ----------
    side : float
        Side of the torus ``[-side/2, side/2]^d`` holding the stars.
    grid : int or None
        When set, ``fit`` also assigns the vertices of a ``grid^d`` lattice and
        stores per-star volumes in ``cell_volumes_``.
    r_cap, t_max, rtol : float
        Capture radius, time limit and relative tolerance of the flow.

    Attributes
    ----------
    stars_ : ndarray of shape (n_stars, d)
    intensity_ : float
        Stars per unit volume; each cell has expected volume ``1 / intensity_``.
    labels_ : ndarray
        Star index of each training point (each star is its own label).
    cell_volumes_ : ndarray or None
    """

    def __init__(self, side=4.0, grid=None, r_cap=R_CAP, t_max=200.0, rtol=RTOL):
        self.side = side
        self.grid = grid
        self.r_cap = r_cap
        self.t_max = t_max
        self.rtol = rtol

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        d = X.shape[1]
        dom = DomainSpec(d, "torus", float(self.side))
        field = StarField(dom.wrap(X), len(X) / dom.volume, dom)
        self.field_ = field
        self.stars_ = field.points
        self.intensity_ = field.intensity
        self.n_features_in_ = d
        self.compiled_ = compile_field(field)
        self.traps_ = trap_radii(self.compiled_, self.r_cap)
        self.labels_ = np.arange(len(X))
        self.cell_volumes_ = None
        if self.grid is not None:
            bmap = assign_basins(field, n=int(self.grid), r_cap=self.r_cap, t_max=self.t_max, rtol=self.rtol,
                                 compiled=self.compiled_)
            self.basin_map_ = bmap
            self.cell_volumes_ = bmap.volumes()
        return self

    def predict(self, X):
        """Star index reached by the flow from each row of ``X``; ``-1`` if not captured by ``t_max``."""
        check_is_fitted(self, "compiled_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        X = self.field_.domain.wrap(X)
        lab, st, _, _, _ = flow_many(X, self.compiled_, 1, self.r_cap, self.t_max, self.rtol, trap=self.traps_)
        return np.where(st == _kernels.STATUS_CAPTURED, lab, -1)

    def capture_times(self, X):
        """Time for the flow from each row of ``X`` to reach its star (``nan`` if not captured)."""
        check_is_fitted(self, "compiled_")
        X = self.field_.domain.wrap(check_array(X, dtype=float))
        _, st, t, _, _ = flow_many(X, self.compiled_, 1, self.r_cap, self.t_max, self.rtol, trap=self.traps_)
        return np.where(st == _kernels.STATUS_CAPTURED, t, np.nan)
