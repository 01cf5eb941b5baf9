"""Internal-functional synthesis, noise injection, and persistence."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import bump, laplace_coefficients, unit_grid
from hiplab.errors import ConfigurationError, NonVanishingError
from hiplab.forward import BoundaryTrace, CoefficientSet, solve_dirichlet
from hiplab.grids import ScalarField, SymTensorField, VectorField
from hiplab.metrics import error_norms
from hiplab.phantoms import materialize_scalar
from hiplab.synthesis import (
    MeasurementSet,
    Modality,
    NoiseSpec,
    add_noise,
    compatible_traces,
    default_traces,
    load_measurements,
    save_measurements,
    synthesize,
)


class TestDefaultTraces:
    def test_two_dimensional_pool(self):
        grid = unit_grid(5)
        traces = default_traces(grid, 5)
        assert len(traces) == 5
        x, y = grid.meshgrid()
        expect = [np.ones_like(x), x, y, x * y, x**2 - y**2]
        for tr, vals in zip(traces, expect):
            assert np.allclose(tr.values, vals)

    def test_three_dimensional_pool(self):
        grid = unit_grid(5, dim=3)
        traces = default_traces(grid, 9)
        assert len(traces) == 9

    def test_scalar_pipeline_prefix(self):
        grid = unit_grid(5)
        traces = default_traces(grid, 3)
        x, y = grid.meshgrid()
        for tr, vals in zip(traces, [np.ones_like(x), x, y]):
            assert np.allclose(tr.values, vals)

    def test_unsupported_count_rejected(self):
        grid = unit_grid(5)
        with pytest.raises(ConfigurationError):
            default_traces(grid, 11)


class TestSynthesize:
    def test_elastography_harmonic_traces_exact(self):
        grid = unit_grid(9)
        ms = synthesize(
            laplace_coefficients(grid),
            Modality.elastography(),
            default_traces(grid, 3),
        )
        x, y = grid.meshgrid()
        assert np.max(np.abs(ms.functionals[0].values - 1.0)) < 1e-12
        assert np.max(np.abs(ms.functionals[1].values - x)) < 1e-12
        assert np.max(np.abs(ms.functionals[2].values - y)) < 1e-12

    def test_generic_weight_scales_functionals(self):
        grid = unit_grid(9)
        ms = synthesize(
            laplace_coefficients(grid),
            Modality.generic(materialize_scalar("2", grid)),
            default_traces(grid, 3),
        )
        x, y = grid.meshgrid()
        assert np.max(np.abs(ms.functionals[0].values - 2.0)) < 1e-12
        assert np.max(np.abs(ms.functionals[1].values - 2 * x)) < 1e-12
        assert np.max(np.abs(ms.functionals[2].values - 2 * y)) < 1e-12

    def test_qpat_functional_is_gamma_c_u(self):
        grid = unit_grid(17)
        base = laplace_coefficients(grid)
        cvals = bump(grid, (0.5, 0.5), 0.08, 0.4)
        coeffs = CoefficientSet(
            a=base.a, b=base.b, c=ScalarField(grid, cvals.astype(np.complex128))
        )
        gamma = materialize_scalar("1 + 0.2*x", grid)
        traces = [BoundaryTrace.from_expression(grid, s) for s in ("2", "2 + x")]
        traces += [BoundaryTrace.from_expression(grid, "2 + y")]
        ms = synthesize(coeffs, Modality.qpat(gamma), traces)
        for tr, h in zip(traces, ms.functionals):
            u = solve_dirichlet(coeffs, tr)
            assert np.max(np.abs(h.values - gamma.values * cvals * u.values)) < 1e-12

    def test_qtat_weight_uses_first_solution(self):
        grid = unit_grid(17)
        base = laplace_coefficients(grid)
        x, y = grid.meshgrid()
        cvals = 0.4 + 0.1 * x + 1j * (0.3 + 0.1 * np.sin(2 * y))
        coeffs = CoefficientSet(a=base.a, b=base.b, c=ScalarField(grid, cvals))
        gamma = materialize_scalar("1", grid)
        traces = [BoundaryTrace.from_expression(grid, s) for s in ("2", "2 + x", "2 + y")]
        ms = synthesize(coeffs, Modality.qtat(gamma), traces)
        u1 = solve_dirichlet(coeffs, traces[0])
        expect = cvals.imag * np.conj(u1.values) * u1.values
        assert np.max(np.abs(ms.functionals[0].values - expect)) < 1e-12

    def test_qtat_quotient_reproduces_solution_ratio(self):
        grid = unit_grid(17)
        base = laplace_coefficients(grid)
        x, y = grid.meshgrid()
        coeffs = CoefficientSet(
            a=base.a,
            b=base.b,
            c=ScalarField(grid, 0.3 + 0.2 * x + 1j * (0.25 + 0.1 * y)),
        )
        traces = [BoundaryTrace.from_expression(grid, s) for s in ("2", "2 + x", "2 + y")]
        ms = synthesize(coeffs, Modality.qtat(materialize_scalar("1", grid)), traces)
        u1 = solve_dirichlet(coeffs, traces[0])
        u2 = solve_dirichlet(coeffs, traces[1])
        h1, h2 = ms.functionals[0].values, ms.functionals[1].values
        lhs = h2 * np.conj(h1) / np.abs(h1) ** 2
        assert np.max(np.abs(lhs - u2.values / u1.values)) < 1e-10

    def test_too_few_traces_rejected(self):
        grid = unit_grid(9)
        with pytest.raises(ConfigurationError):
            synthesize(
                laplace_coefficients(grid),
                Modality.elastography(),
                default_traces(grid, 3)[:2],
            )

    def test_elastography_refuses_drift(self):
        grid = unit_grid(9)
        base = laplace_coefficients(grid)
        bvals = np.zeros(grid.shape + (2,))
        bvals[..., 0] = 0.5
        coeffs = CoefficientSet(a=base.a, b=VectorField(grid, bvals), c=base.c)
        with pytest.raises(ConfigurationError):
            synthesize(coeffs, Modality.elastography(), default_traces(grid, 3))

    def test_vanishing_first_functional_raises_with_vertex(self):
        grid = unit_grid(9)
        traces = [
            BoundaryTrace.from_expression(grid, s) for s in ("x", "1", "y")
        ]
        with pytest.raises(NonVanishingError) as info:
            synthesize(laplace_coefficients(grid), Modality.elastography(), traces)
        assert "vertex" in str(info.value)

    def test_d_cancellation_in_ratios(self):
        grid = unit_grid(17)
        coeffs = laplace_coefficients(grid)
        traces = [
            BoundaryTrace.from_expression(grid, s) for s in ("2", "2 + x", "2 + y")
        ]
        weights = (
            materialize_scalar("1", grid),
            materialize_scalar("1 + 0.4*x*y + 0.2*sin(3*x)", grid),
        )
        ratio_sets = []
        for w in weights:
            ms = synthesize(coeffs, Modality.generic(w), traces)
            h1 = ms.functionals[0].values
            ratio_sets.append([h.values / h1 for h in ms.functionals[1:]])
        for left, right in zip(*ratio_sets):
            assert np.max(np.abs(left - right)) < 4 * np.finfo(float).eps


class TestNoise:
    def make_measurements(self, n=17):
        grid = unit_grid(n)
        return synthesize(
            laplace_coefficients(grid),
            Modality.elastography(),
            [
                BoundaryTrace.from_expression(grid, s)
                for s in ("2", "2 + x", "2 + y")
            ],
        )

    def test_zero_amplitude_is_bit_exact_identity(self):
        ms = self.make_measurements()
        noisy = add_noise(ms, NoiseSpec(amplitude=0.0, correlation_length=0.1, seed=4))
        for before, after in zip(ms.functionals, noisy.functionals):
            assert np.array_equal(before.values, after.values)

    def test_same_seed_is_deterministic(self):
        ms = self.make_measurements()
        spec = NoiseSpec(amplitude=1e-3, correlation_length=0.1, seed=7)
        one = add_noise(ms, spec)
        two = add_noise(ms, spec)
        for left, right in zip(one.functionals, two.functionals):
            assert np.array_equal(left.values, right.values)
        other = add_noise(ms, NoiseSpec(amplitude=1e-3, correlation_length=0.1, seed=8))
        assert not np.array_equal(
            one.functionals[0].values, other.functionals[0].values
        )

    def test_perturbation_scales_linearly_in_amplitude(self):
        ms = self.make_measurements(33)
        mask = ms.grid.interior(2)
        spec1 = NoiseSpec(amplitude=1e-3, correlation_length=0.1, seed=5)
        spec2 = NoiseSpec(amplitude=2e-3, correlation_length=0.1, seed=5)
        d1 = error_norms(
            add_noise(ms, spec1).functionals[0], ms.functionals[0], mask=mask
        ).c2
        d2 = error_norms(
            add_noise(ms, spec2).functionals[0], ms.functionals[0], mask=mask
        ).c2
        assert d2 / d1 == pytest.approx(2.0, rel=0.01)

    def test_noise_amplitude_is_relative_to_sup_norm(self):
        ms = self.make_measurements()
        spec = NoiseSpec(amplitude=1e-3, correlation_length=0.1, seed=6)
        noisy = add_noise(ms, spec)
        for before, after in zip(ms.functionals, noisy.functionals):
            delta = np.max(np.abs(after.values - before.values))
            top = np.max(np.abs(before.values))
            assert delta <= 1e-3 * top * (1 + 1e-12)
            assert delta >= 0.5e-3 * top


class TestCompatibleTraces:
    def corner_mismatch(self, coeffs, trace):
        """The equation's value at a corner, applied to the datum."""
        from hiplab.grids import gradient, hessian, sym_to_full

        grid = coeffs.grid
        f = ScalarField(grid, trace.values)
        grad_f = gradient(f).values
        hess_f = sym_to_full(hessian(f).values, grid.dim)
        a_full = coeffs.a.full()
        out = []
        for idx in ((0, 0), (0, -1), (-1, 0), (-1, -1)):
            second = np.trace(a_full[idx] @ hess_f[idx])
            drift = np.sum(coeffs.b.values[idx] * grad_f[idx])
            out.append(second + drift + coeffs.c.values[idx] * f.values[idx])
        return np.array(out)

    def test_corner_mismatch_vanishes_under_refinement(self):
        """The raw datum keeps an O(1) corner defect; the fixed one loses it.

        The correction cancels the continuum-level mismatch, so measuring
        it with one-sided stencils leaves only truncation error that dies
        with the grid, while the uncorrected datum's defect never moves.
        """
        raw_levels, fixed_levels = [], []
        for n in (17, 33, 65):
            grid = unit_grid(n)
            base = laplace_coefficients(grid)
            coeffs = CoefficientSet(
                a=base.a,
                b=base.b,
                c=materialize_scalar("0.5 + 0.25*x + 0.1*y", grid),
            )
            raw = [BoundaryTrace.from_expression(grid, "2 + x^2")]
            fixed = compatible_traces(coeffs, raw)
            raw_levels.append(np.max(np.abs(self.corner_mismatch(coeffs, raw[0]))))
            fixed_levels.append(
                np.max(np.abs(self.corner_mismatch(coeffs, fixed[0])))
            )
        assert min(raw_levels) > 1.0
        assert max(raw_levels) / min(raw_levels) < 1.01
        assert fixed_levels[0] > fixed_levels[1] > fixed_levels[2]
        assert fixed_levels[2] < 0.05 * raw_levels[2]

    def test_correction_is_corner_localized(self):
        grid = unit_grid(33)
        base = laplace_coefficients(grid)
        coeffs = CoefficientSet(
            a=base.a, b=base.b, c=materialize_scalar("1", grid)
        )
        raw = BoundaryTrace.from_expression(grid, "2 + x")
        fixed = compatible_traces(coeffs, [raw])[0]
        diff = np.abs(fixed.values - raw.values)
        x, y = grid.meshgrid()
        r2 = np.minimum.reduce(
            [(x - cx) ** 2 + (y - cy) ** 2 for cx in (0, 1) for cy in (0, 1)]
        )
        peak_r2 = float(r2.flat[int(np.argmax(diff))])
        # the bump 0.25 r^2 exp(-r^2/s) peaks at r^2 = s = 0.1
        assert peak_r2 < 4 * 0.1
        assert diff[16, 16] < 0.5 * np.max(diff)
        # each bump vanishes at its own corner; only e^{-1/s} tails remain
        assert diff[0, 0] < 0.01 * np.max(diff)

    def test_off_diagonal_corner_diffusion_rejected(self):
        grid = unit_grid(17)
        full = np.zeros(grid.shape + (3,))
        full[..., 0] = 1.0
        full[..., 1] = 1.0
        full[..., 2] = 0.3
        coeffs = CoefficientSet(
            a=SymTensorField(grid, full),
            b=laplace_coefficients(grid).b,
            c=laplace_coefficients(grid).c,
        )
        with pytest.raises(ConfigurationError):
            compatible_traces(coeffs, [BoundaryTrace.from_expression(grid, "1")])

    def test_nonpositive_sharpness_rejected(self):
        grid = unit_grid(17)
        coeffs = laplace_coefficients(grid)
        with pytest.raises(ConfigurationError):
            compatible_traces(
                coeffs,
                [BoundaryTrace.from_expression(grid, "1")],
                sharpness=0.0,
            )


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        grid = unit_grid(9)
        ms = synthesize(
            laplace_coefficients(grid),
            Modality.elastography(),
            [
                BoundaryTrace.from_expression(grid, s)
                for s in ("2", "2 + x", "2 + y")
            ],
        )
        save_measurements(ms, str(tmp_path))
        back = load_measurements(str(tmp_path))
        assert back.modality == ms.modality
        assert back.count == ms.count
        for left, right in zip(ms.functionals, back.functionals):
            assert np.array_equal(left.values, right.values)
        for left, right in zip(ms.traces, back.traces):
            assert np.array_equal(left.values, right.values)
        assert np.array_equal(back.weight.values, ms.weight.values)

    def test_noise_spec_survives_round_trip(self, tmp_path):
        grid = unit_grid(9)
        ms = synthesize(
            laplace_coefficients(grid),
            Modality.elastography(),
            [
                BoundaryTrace.from_expression(grid, s)
                for s in ("2", "2 + x", "2 + y")
            ],
        )
        noisy = add_noise(ms, NoiseSpec(amplitude=1e-4, correlation_length=0.2, seed=3))
        save_measurements(noisy, str(tmp_path))
        back = load_measurements(str(tmp_path))
        assert back.noise is not None
        assert back.noise.amplitude == 1e-4
        assert back.noise.correlation_length == 0.2
        assert back.noise.seed == 3
