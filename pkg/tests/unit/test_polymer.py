"""Tests for polymer densities and path sampling"""
import numpy as np
import pytest

from src.burgers import burgers_trajectory
from src.heat_kernels import torus_heat_kernel
from src.models import DomainError, GridError
from src.polymer import (
    BaseMeasure,
    endpoint_density,
    euler_maruyama,
    midpoint_density,
    midpoint_log_derivative_residual,
    mixing_gap,
    path_generator,
    sample_forward_paths,
    sample_polymer_paths,
    sample_uniform_start_paths,
)
from src.she_engine import propagator


class TestBaseMeasure:
    """Test suite for base measures"""

    def test_dirac_weights(self, quiet_noise):
        """Test a Dirac mass has unit grid mass"""
        weights = BaseMeasure.dirac(0.25).weights(quiet_noise.grid)
        assert weights[8] == pytest.approx(32.0)
        assert weights.sum() * quiet_noise.grid.dx == pytest.approx(1.0)

    def test_unknown_kind(self):
        """Test measure kinds are validated"""
        with pytest.raises(ValueError):
            BaseMeasure("gaussian")


class TestEndpointDensity:
    """Test suite for forward and backward endpoint densities"""

    def test_uniform_stays_uniform(self, quiet_noise):
        """Test the uniform measure without forcing"""
        for direction in ("forward", "backward"):
            result = endpoint_density(quiet_noise, direction, 0.0, -0.5, BaseMeasure.uniform())
            np.testing.assert_allclose(result.field.values, 1.0, atol=1e-12)

    def test_forward_dirac_is_heat_kernel(self, quiet_noise):
        """Test the forward density from a point without forcing"""
        result = endpoint_density(quiet_noise, "forward", 0.0, -0.5, BaseMeasure.dirac(0.25))
        expected = torus_heat_kernel(0.5, quiet_noise.grid.x - 0.25)
        np.testing.assert_allclose(result.field.values, expected, atol=1e-9)
        assert result.field.time == 0.0

    def test_backward_dirac_is_row(self, smooth_noise):
        """Test the backward density is a normalized propagator row"""
        result = endpoint_density(smooth_noise, "backward", 0.0, -0.5, BaseMeasure.dirac(0.25))
        row = propagator(smooth_noise, -0.5, 0.0).row(8)
        np.testing.assert_allclose(result.field.values, row / (row.sum() * smooth_noise.grid.dx), rtol=1e-8)
        assert result.field.time == -0.5

    def test_time_order(self, quiet_noise):
        """Test t <= s raises"""
        with pytest.raises(DomainError):
            endpoint_density(quiet_noise, "forward", -0.5, -0.5, BaseMeasure.uniform())

    def test_direction(self, quiet_noise):
        """Test unknown directions"""
        with pytest.raises(ValueError):
            endpoint_density(quiet_noise, "sideways", 0.0, -0.5, BaseMeasure.uniform())


class TestMidpointDensity:
    """Test suite for the mid-point density"""

    def test_heat_kernel_without_noise(self, quiet_noise):
        """Test the mid-point law of Brownian motion"""
        result = midpoint_density(quiet_noise, 0.0, 0.0, 0.5, 1.0)
        expected = torus_heat_kernel(0.5, quiet_noise.grid.x)
        np.testing.assert_allclose(result.field.values, expected, atol=1e-9)

    def test_tilt_moves_the_law(self, quiet_noise):
        """Test the law is centred at x + theta s for constant drift theta"""
        result = midpoint_density(quiet_noise, 0.5, 0.0, 0.5, 1.0)
        expected = torus_heat_kernel(0.5, quiet_noise.grid.x - 0.25)
        np.testing.assert_allclose(result.field.values, expected, atol=1e-9)
        assert result.rounding_error == 0.0

    def test_unit_mass_with_noise(self, smooth_noise):
        """Test normalization under forcing"""
        result = midpoint_density(smooth_noise, 0.3, 0.25, 0.4, 1.0)
        assert result.field.mass == pytest.approx(1.0, abs=1e-10)
        assert np.min(result.field.values) >= 0

    def test_interior_time(self, smooth_noise):
        """Test 0 < s <= T"""
        with pytest.raises(DomainError):
            midpoint_density(smooth_noise, 0.0, 0.0, 1.5, 1.0)

    def test_log_derivative_residual(self, quiet_noise):
        """Test d_x rho = rho (U - u) without forcing"""
        spectral_residual = midpoint_log_derivative_residual(quiet_noise, 0.0, 0.0, 0.5, 1.0, method="spectral")
        forward_residual = midpoint_log_derivative_residual(quiet_noise, 0.0, 0.0, 0.5, 1.0)
        assert spectral_residual < 1e-8
        assert forward_residual < 1e-3

    def test_residual_method(self, quiet_noise):
        """Test unknown differentiation methods"""
        with pytest.raises(ValueError):
            midpoint_log_derivative_residual(quiet_noise, 0.0, 0.0, 0.5, 1.0, method="central")

    def test_mixing_gap(self, smooth_noise):
        """Test the L1 gap between horizons"""
        assert mixing_gap(smooth_noise, 0.0, 0.0, 0.25, 0.5, 0.5) == 0.0
        gap = mixing_gap(smooth_noise, 0.0, 0.0, 0.25, 0.5, 1.0)
        assert 0.0 < gap <= 2.0
        with pytest.raises(DomainError):
            mixing_gap(smooth_noise, 0.0, 0.0, 0.75, 0.5, 1.0)


class TestPathSampling:
    """Test suite for Euler-Maruyama path ensembles"""

    def test_polymer_moments_without_noise(self, quiet_noise):
        """Test constant drift theta and unit diffusivity"""
        paths = sample_polymer_paths(quiet_noise, 0.5, 0.0, 1.0, 4000, seed=1, record_times=[0.5, 1.0])
        np.testing.assert_allclose(paths.times, [0.0, 0.5, 1.0])
        assert np.mean(paths.at(1.0)) == pytest.approx(0.5, abs=0.07)
        assert np.var(paths.at(1.0)) == pytest.approx(1.0, rel=0.1)
        np.testing.assert_array_equal(paths.start, 0.0)

    def test_deterministic(self, smooth_noise):
        """Test equal seeds give equal paths"""
        path = burgers_trajectory(smooth_noise, 0.0, 1.0)
        first = sample_polymer_paths(smooth_noise, 0.0, 0.0, 1.0, 50, seed=3, path=path)
        second = sample_polymer_paths(smooth_noise, 0.0, 0.0, 1.0, 50, seed=3, path=path)
        other = sample_polymer_paths(smooth_noise, 0.0, 0.0, 1.0, 50, seed=4, path=path)
        np.testing.assert_array_equal(first.terminal, second.terminal)
        assert not np.array_equal(first.terminal, other.terminal)

    def test_unrecorded_time(self, quiet_noise):
        """Test asking for a time that was not recorded"""
        paths = sample_polymer_paths(quiet_noise, 0.0, 0.0, 1.0, 10, seed=0)
        with pytest.raises(GridError):
            paths.at(0.3)

    def test_forward_drift_sign(self, quiet_noise):
        """Test the particle moves with velocity -theta"""
        path = burgers_trajectory(quiet_noise, 0.8, 1.0)
        paths = sample_forward_paths(path, np.zeros(4000), -1.0, [0.0], seed=2)
        assert np.mean(paths.at(0.0)) == pytest.approx(-0.8, abs=0.07)
        assert paths.winding.shape == (4000,)

    def test_uniform_start(self, quiet_noise):
        """Test starts are uniform on the torus"""
        paths = sample_uniform_start_paths(quiet_noise, 0.0, 1.0, 500, seed=5, record_times=[0.0])
        assert np.all((paths.start >= 0) & (paths.start < 1))
        assert np.all((paths.wrapped(0.0) >= 0) & (paths.wrapped(0.0) < 1))
        assert paths.times[0] == pytest.approx(-1.0)

    def test_euler_maruyama_records(self):
        """Test recorded step counts"""
        drifts = iter([np.zeros(16)] * 10)
        recorded = euler_maruyama(drifts, np.zeros(3), 10, 0.01, path_generator(0), {0, 4, 10})
        assert sorted(recorded) == [0, 4, 10]
        assert not np.array_equal(recorded[4], recorded[10])
