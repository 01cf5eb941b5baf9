"""Dirichlet assembly and solve for the scalar elliptic operator."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import laplace_coefficients, unit_grid
from hiplab.errors import GridError, SolverFailure
from hiplab.forward import (
    BoundaryTrace,
    CoefficientSet,
    SolverSettings,
    assemble,
    residual,
    solve_dirichlet,
)
from hiplab.grids import Grid, ScalarField, SymTensorField, VectorField


def drift_coefficients(grid, b0, b1):
    base = laplace_coefficients(grid)
    vals = np.zeros(grid.shape + (2,))
    vals[..., 0] = b0
    vals[..., 1] = b1
    return CoefficientSet(a=base.a, b=VectorField(grid, vals), c=base.c)


class TestAssembly:
    def test_laplace_center_row_is_five_point(self):
        grid = unit_grid(5)
        system = assemble(laplace_coefficients(grid), BoundaryTrace.from_expression(grid, "0"))
        row = system.matrix.toarray()[4] * grid.spacing[0] ** 2
        assert np.allclose(row, [0, 1, 0, 1, -4, 1, 0, 1, 0], atol=1e-12)

    def test_matrix_scales_with_diffusion(self):
        grid = unit_grid(5)
        base = laplace_coefficients(grid)
        doubled = CoefficientSet(
            a=SymTensorField(grid, base.a.values * 2.0), b=base.b, c=base.c
        )
        tr = BoundaryTrace.from_expression(grid, "0")
        m1 = assemble(base, tr).matrix.toarray()
        m2 = assemble(doubled, tr).matrix.toarray()
        assert np.allclose(m2, 2 * m1, atol=1e-12)

    def test_drift_perturbs_neighbors_by_centered_difference(self):
        grid = unit_grid(5)
        tr = BoundaryTrace.from_expression(grid, "0")
        plain = assemble(laplace_coefficients(grid), tr).matrix.toarray()
        with_b = assemble(drift_coefficients(grid, 1.0, 0.0), tr).matrix.toarray()
        delta = (with_b - plain)[4]
        # b0/(2h) = 2 lands on the axis-0 neighbors with opposite signs
        assert np.allclose(delta, [0, -2, 0, 0, 0, 0, 0, 2, 0], atol=1e-12)

    def test_mismatched_trace_grid_rejected(self):
        grid = unit_grid(5)
        other = unit_grid(9)
        with pytest.raises(GridError):
            assemble(
                laplace_coefficients(grid),
                BoundaryTrace.from_expression(other, "0"),
            )


class TestSolve:
    def test_affine_data_reproduced_exactly(self):
        grid = unit_grid(9)
        coeffs = laplace_coefficients(grid)
        x, _ = grid.meshgrid()
        u = solve_dirichlet(coeffs, BoundaryTrace.from_expression(grid, "x"))
        assert np.max(np.abs(u.values - x)) < 1e-12
        one = solve_dirichlet(coeffs, BoundaryTrace.from_expression(grid, "1"))
        assert np.max(np.abs(one.values - 1.0)) < 1e-12

    def test_manufactured_solution_second_order(self):
        errs = []
        sizes = (17, 33, 65)
        for n in sizes:
            grid = unit_grid(n)
            x, y = grid.meshgrid()
            star = 2 + np.sin(np.pi * x) * np.sin(np.pi * y)
            lap = -2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
            gx = np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)
            gy = np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
            cvals = -(lap + 0.3 * gx - 0.1 * gy) / star
            base = drift_coefficients(grid, 0.3, -0.1)
            coeffs = CoefficientSet(
                a=base.a, b=base.b, c=ScalarField(grid, cvals.astype(np.complex128))
            )
            u = solve_dirichlet(coeffs, BoundaryTrace(grid, star.astype(np.complex128)))
            errs.append(float(np.max(np.abs(u.values - star))))
        rates = [
            np.log(errs[k] / errs[k + 1]) / np.log(2.0) for k in range(len(errs) - 1)
        ]
        assert min(rates) >= 1.9

    def test_iterative_path_matches_direct(self):
        grid = unit_grid(17)
        coeffs = laplace_coefficients(grid)
        tr = BoundaryTrace.from_expression(grid, "x*y")
        direct = solve_dirichlet(coeffs, tr, settings=SolverSettings(method="direct"))
        iterative = solve_dirichlet(
            coeffs, tr, settings=SolverSettings(method="iterative", tolerance=1e-13)
        )
        assert np.max(np.abs(direct.values - iterative.values)) < 1e-9

    def test_starved_iterations_raise_solver_failure(self):
        grid = unit_grid(17)
        coeffs = laplace_coefficients(grid)
        tr = BoundaryTrace.from_expression(grid, "x^2 - y^2")
        with pytest.raises(SolverFailure):
            solve_dirichlet(
                coeffs,
                tr,
                settings=SolverSettings(method="iterative", max_iterations=1),
            )


class TestResidual:
    def test_discrete_solution_has_tiny_residual(self):
        grid = unit_grid(17)
        coeffs = laplace_coefficients(grid)
        tr = BoundaryTrace.from_expression(grid, "x*y + 0.3*x")
        u = solve_dirichlet(coeffs, tr)
        assert residual(coeffs, u, tr) <= 1e-10

    def test_residual_grows_monotonically_with_perturbation(self):
        grid = unit_grid(17)
        coeffs = laplace_coefficients(grid)
        tr = BoundaryTrace.from_expression(grid, "x*y")
        u = solve_dirichlet(coeffs, tr)
        x, y = grid.meshgrid()
        bump = np.sin(np.pi * x) * np.sin(np.pi * y)
        last = residual(coeffs, u, tr)
        for eps in (1e-8, 1e-6, 1e-4):
            wrong = ScalarField(grid, u.values + eps * bump)
            nxt = residual(coeffs, wrong, tr)
            assert nxt > last
            last = nxt

    def test_sampled_continuum_solution_residual_is_second_order(self):
        vals = []
        for n in (17, 33, 65):
            grid = unit_grid(n)
            coeffs = laplace_coefficients(grid)
            x, y = grid.meshgrid()
            exact = np.sin(np.pi * x) * np.sinh(np.pi * y) / np.sinh(np.pi)
            tr = BoundaryTrace(grid, exact.astype(np.complex128))
            vals.append(
                residual(coeffs, ScalarField(grid, exact.astype(np.complex128)), tr)
            )
        rates = [
            np.log(vals[k] / vals[k + 1]) / np.log(2.0) for k in range(len(vals) - 1)
        ]
        assert min(rates) >= 1.9
