"""Tests for SHE stepping, propagators and the companion field"""
import numpy as np
import pytest

from src.heat_kernels import torus_heat_kernel
from src.models import DomainError, GridError, PositivityLostError, ScalarField
from src.she_engine import (
    SHEStepper,
    adjoint_evolve,
    evolve,
    evolve_flat,
    first_moment_batch,
    first_moment_field,
    propagator,
    propagator_rows,
    propagator_sweep,
    she_step,
)
from tests.fixtures.sample_data import TestDataFactory


class TestStepping:
    """Test suite for single steps"""

    def test_she_step_advances_time(self, smooth_noise):
        """Test one step from the flat profile"""
        state = ScalarField(smooth_noise.grid, -1.0, np.ones(32))
        result = she_step(state, smooth_noise.increment(0), smooth_noise.grid.dt)
        assert result.time == pytest.approx(-1.0 + smooth_noise.grid.dt)
        assert np.all(result.values > 0)

    def test_she_step_positivity(self, smooth_noise):
        """Test a kick below -1 is reported"""
        state = ScalarField(smooth_noise.grid, -1.0, np.ones(32))
        increment = np.full(32, -3.0)
        with pytest.raises(PositivityLostError):
            she_step(state, increment, smooth_noise.grid.dt, mode="lattice")

    def test_she_step_wrong_dt(self, smooth_noise):
        """Test dt must match the grid"""
        state = ScalarField(smooth_noise.grid, -1.0, np.ones(32))
        with pytest.raises(GridError):
            she_step(state, smooth_noise.increment(0), 0.5)

    def test_stepper_mode(self):
        """Test unknown schemes are rejected"""
        with pytest.raises(ValueError):
            SHEStepper(16, 0.01, mode="euler")

    def test_flat_stays_flat_without_noise(self, quiet_noise):
        """Test the heat flow preserves constants"""
        result = evolve_flat(quiet_noise, -1.0, [0.0])[0.0]
        np.testing.assert_allclose(result.values, 1.0, atol=1e-13)


class TestPropagator:
    """Test suite for propagator matrices"""

    def test_heat_kernel_without_noise(self, quiet_noise):
        """Test G equals the torus heat kernel when the forcing vanishes"""
        matrix = propagator(quiet_noise, -0.5, 0.0).entries
        x = quiet_noise.grid.x
        expected = torus_heat_kernel(0.5, np.subtract.outer(x, x))
        np.testing.assert_allclose(matrix, expected, atol=1e-10)

    def test_chapman_kolmogorov(self, smooth_noise):
        """Test G_{0,-1} = G_{0,-1/2} G_{-1/2,-1} dx"""
        dx = smooth_noise.grid.dx
        whole = propagator(smooth_noise, -1.0, 0.0).entries
        split = propagator(smooth_noise, -0.5, 0.0).entries @ propagator(smooth_noise, -1.0, -0.5).entries * dx
        np.testing.assert_allclose(split, whole, rtol=1e-9, atol=1e-12 * np.max(whole))

    def test_sweep_matches_forward(self, smooth_noise):
        """Test the backward sweep reproduces forward propagators"""
        sweep = propagator_sweep(smooth_noise, 0.0, [-0.2, -0.6])
        for s in (-0.2, -0.6):
            forward = propagator(smooth_noise, s, 0.0).entries
            np.testing.assert_allclose(sweep[s].entries, forward, rtol=1e-9, atol=1e-12 * np.max(forward))

    def test_rows_match_matrix(self, smooth_noise):
        """Test propagator rows and the adjoint evolution"""
        matrix = propagator(smooth_noise, -0.4, 0.0)
        rows = propagator_rows(smooth_noise, [3, 17], -0.4, 0.0)
        np.testing.assert_allclose(rows[0], matrix.row(3), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(rows[1], matrix.row(17), rtol=1e-9, atol=1e-12)
        weights = np.linspace(0.5, 1.5, 32)[None, :]
        dx = smooth_noise.grid.dx
        np.testing.assert_allclose(
            adjoint_evolve(smooth_noise, weights, -0.4, 0.0)[0],
            weights[0] @ matrix.entries * dx,
            rtol=1e-9,
        )

    def test_flat_is_row_integral(self, smooth_noise):
        """Test the flat solution integrates the propagator over y"""
        matrix = propagator(smooth_noise, -0.7, 0.0).entries
        flat = evolve_flat(smooth_noise, -0.7, [0.0])[0.0].values
        np.testing.assert_allclose(flat, matrix.sum(axis=1) * smooth_noise.grid.dx, rtol=1e-10)

    def test_columns_stay_nonnegative(self, smooth_noise):
        """Test Dirac-started columns stay nonnegative up to roundoff"""
        matrix = propagator(smooth_noise, -0.05, 0.0).entries
        assert np.min(matrix) >= -1e-12 * np.max(matrix)

    def test_time_order(self, smooth_noise):
        """Test s > t raises"""
        with pytest.raises(DomainError):
            evolve(smooth_noise, np.ones(32), 0.0, -0.5)

    def test_checkpoints(self, smooth_noise):
        """Test intermediate states are returned"""
        states = evolve(smooth_noise, np.ones(32), -1.0, 0.0, checkpoints=[-1.0, -0.5])
        assert set(states) == {-1.0, -0.5, 0.0}
        np.testing.assert_array_equal(states[-1.0], np.ones(32))


class TestCompanionField:
    """Test suite for the winding companion"""

    def test_vanishes_without_noise(self, quiet_noise):
        """Test M = 0 for flat data and no forcing"""
        z, m = first_moment_field(quiet_noise, -1.0, 0.0, tilt=0.4)
        np.testing.assert_allclose(z.values, 1.0, atol=1e-12)
        np.testing.assert_allclose(m.values, 0.0, atol=1e-12)

    def test_is_tilt_derivative(self, smooth_noise):
        """Test M against a central difference of Z in the tilt"""
        h = 1e-5
        _, m = first_moment_field(smooth_noise, -1.0, 0.0, tilt=0.3)
        upper = evolve_flat(smooth_noise, -1.0, [0.0], tilt=0.3 + h)[0.0].values
        lower = evolve_flat(smooth_noise, -1.0, [0.0], tilt=0.3 - h)[0.0].values
        np.testing.assert_allclose(m.values, (upper - lower) / (2 * h), rtol=1e-5, atol=1e-8)

    def test_batch_matches_single(self):
        """Test the batched companion equals the per-realization result"""
        noises = [TestDataFactory.create_noise(t_start=-0.5, seed=seed) for seed in (1, 2, 3)]
        z, m = first_moment_batch(noises, -0.5, 0.0, tilt=0.2)
        for column, noise in enumerate(noises):
            single_z, single_m = first_moment_field(noise, -0.5, 0.0, tilt=0.2)
            np.testing.assert_allclose(z[:, column], single_z.values, rtol=1e-12)
            np.testing.assert_allclose(m[:, column], single_m.values, rtol=1e-10, atol=1e-14)

    def test_batch_requires_common_grid(self):
        """Test mixed grids are rejected"""
        noises = [
            TestDataFactory.create_noise(t_start=-0.5, seed=1),
            TestDataFactory.create_noise(t_start=-1.0, seed=2),
        ]
        with pytest.raises(GridError):
            first_moment_batch(noises, -0.5, 0.0)
