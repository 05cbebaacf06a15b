"""Moment maps, cylinder cubatures, Taylor expansion of the kernel and the dominated-box partition."""

from .boxes import DEFAULT_A, DominatedBoxes, farthest_distance, is_dominated, partition_dominated_boxes
from .cylinder import (
    CertificationError,
    CubatureRule,
    NuMeasure,
    Patch,
    PatchDecomposition,
    PatchRule,
    build_cubature,
    certify,
    default_n1,
    fit_patch_points,
    nu_measure,
    partition_cylinder,
    patch_moments,
    sphere_partition,
)
from .density import DensityEstimate, empirical_density_check, sample_moment_sums, uniform_cube_moments
from .moments import MomentVector, m0, moment_map, moment_matrix, monomials, multi_indices, polydim
from .taylor import (
    ForceEventReport,
    QuadratureLaw,
    TaylorModel,
    TaylorRangeError,
    UniformBallLaw,
    check_force_approx_event,
    fit_c20,
    taylor_coefficients,
    taylor_eval,
    taylor_model,
    taylor_remainder_bound,
)
