"""Shared builders for the test suite.

Phantoms here are small and smooth so every test stays desk scale;
the bump amplitudes keep all coefficients uniformly elliptic.
"""

from __future__ import annotations

import numpy as np

from hiplab.forward import CoefficientSet
from hiplab.grids import Grid, ScalarField, SymTensorField, VectorField


def unit_grid(n: int, dim: int = 2) -> Grid:
    return Grid(bounds=((0.0, 1.0),) * dim, shape=(n,) * dim)


def scalar_tensor(grid: Grid, values: np.ndarray) -> SymTensorField:
    """Isotropic matrix field ``values * I``."""
    return SymTensorField(
        grid, SymTensorField.identity(grid).values * values[..., None]
    )


def bump(grid: Grid, center, width: float, height: float) -> np.ndarray:
    mesh = grid.meshgrid()
    r2 = sum((mesh[ax].real - center[ax]) ** 2 for ax in range(grid.dim))
    return 1.0 + height * np.exp(-r2 / width)


def laplace_coefficients(grid: Grid) -> CoefficientSet:
    """The plain Laplace operator: a = I, b = 0, c = 0."""
    return CoefficientSet(
        a=SymTensorField.identity(grid),
        b=VectorField.zero(grid),
        c=ScalarField.constant(grid, 0.0),
    )


def elastography_coefficients(grid: Grid) -> CoefficientSet:
    """Scalar-bump diffusion with a smooth zero-order term."""
    x, y = (m.real for m in grid.meshgrid()[:2])
    a = scalar_tensor(grid, bump(grid, (0.5, 0.5), 0.08, 0.4))
    c = ScalarField(grid, 0.5 + 0.3 * np.sin(2 * x) * np.cos(2 * y))
    return CoefficientSet(a=a, b=VectorField.zero(grid), c=c)
