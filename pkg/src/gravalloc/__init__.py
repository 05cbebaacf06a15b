"""Gravitational allocation of Poisson stars in R^d, d >= 3."""

from .pointfield import (
    Annulus,
    Ball,
    Box,
    Complement,
    Cylinder,
    CylinderSurface,
    DomainSpec,
    Intersection,
    ShiftedCylinder,
    StarField,
    kappa,
    sample_poisson,
)

__version__ = "0.1.0"

__all__ = [
    "Annulus",
    "Ball",
    "Box",
    "Complement",
    "Cylinder",
    "CylinderSurface",
    "DomainSpec",
    "Intersection",
    "ShiftedCylinder",
    "StarField",
    "kappa",
    "sample_poisson",
]
