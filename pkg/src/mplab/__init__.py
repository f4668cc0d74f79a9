"""Numerical laboratory for spin-1/2 fermions in self-generated magnetic fields."""

from .fields import Grid3, ScalarField, SpinorField, VectorField

__version__ = "0.1.0"

__all__ = ["Grid3", "ScalarField", "VectorField", "SpinorField", "__version__"]
