"""Small input checks shared by the public API."""

from __future__ import annotations

import numbers

import numpy as np


class ParameterError(ValueError):
    """Raised when an argument violates a documented precondition."""


def check_dim(d, minimum=3):
    if not isinstance(d, numbers.Integral) or isinstance(d, bool):
        raise ParameterError(f"dimension must be an integer, got {d!r}")
    if d < minimum:
        raise ParameterError(f"dimension must be >= {minimum}, got {d}")
    return int(d)


def check_positive(value, name, allow_zero=False):
    try:
        v = float(value)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"{name} must be a real number") from exc
    if not np.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ParameterError(f"{name} must be finite and {bound}, got {value!r}")
    return v


def check_vector(x, d=None, name="x"):
    """Return ``x`` as a 1-D float array, optionally of length ``d``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ParameterError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ParameterError(f"{name} must have length {d}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


def check_points(points, d=None, name="points"):
    """Return ``points`` as an (n, d) float array; an empty input gives shape (0, d)."""
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        if d is None:
            raise ParameterError(f"{name} is empty and no dimension was given")
        return np.zeros((0, d))
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ParameterError(f"{name} must be 2-D, got shape {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise ParameterError(f"{name} must have {d} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr
