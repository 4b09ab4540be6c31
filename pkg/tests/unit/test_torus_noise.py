"""Tests for forcing sampling and the shear transformation"""
import numpy as np
import pytest

from src.models import CovarianceError, CovarianceSpec, GridError, TorusGrid
from src.torus_noise import covariance_eval, sample_noise, shear_noise, zero_noise
from tests.fixtures.sample_data import TestDataFactory

SPEC = CovarianceSpec(mode_weights=(0.0, 0.5, 0.25))


class TestCovariance:
    """Test suite for covariance evaluation"""

    def test_values(self):
        """Test R at a few points"""
        assert covariance_eval(SPEC, 0.0) == pytest.approx(0.75)
        assert covariance_eval(SPEC, 0.25) == pytest.approx(-0.25)

    def test_periodic_bitwise(self):
        """Test R(x + 1) == R(x)"""
        x = np.array([0.1, 0.33, 0.9])
        np.testing.assert_array_equal(covariance_eval(SPEC, x + 1.0), covariance_eval(SPEC, x))

    def test_white_is_distributional(self):
        """Test white noise has no pointwise covariance"""
        with pytest.raises(CovarianceError):
            covariance_eval(CovarianceSpec(is_white=True), 0.0)


class TestSampling:
    """Test suite for sampled realizations"""

    def test_deterministic(self):
        """Test identical arguments give identical increments"""
        first = TestDataFactory.create_noise(seed=3).increments
        second = TestDataFactory.create_noise(seed=3).increments
        np.testing.assert_array_equal(first, second)
        assert not np.array_equal(first, TestDataFactory.create_noise(seed=4).increments)

    def test_sub_window_consistent(self):
        """Test a shorter window reproduces the tail of a longer one"""
        long = TestDataFactory.create_noise(t_start=-1.0, seed=5).increments
        short = TestDataFactory.create_noise(t_start=-0.5, seed=5).increments
        np.testing.assert_allclose(short, long[500:], rtol=0, atol=1e-15)

    def test_empirical_covariance(self):
        """Test Cov(W(0), W(x)) = R(x) dt"""
        dt = 1e-3
        grid = TorusGrid(16, 0.0, 20.0, dt)
        increments = sample_noise(SPEC, grid, seed=11).increments / np.sqrt(dt)
        assert np.var(increments[:, 0]) == pytest.approx(0.75, abs=0.05)
        assert np.mean(increments[:, 0] * increments[:, 4]) == pytest.approx(-0.25, abs=0.05)

    def test_unresolvable_modes(self):
        """Test K > n/4 is rejected"""
        spec = CovarianceSpec(mode_weights=(0.0, 1.0, 1.0, 1.0, 1.0, 1.0))
        with pytest.raises(GridError):
            sample_noise(spec, TorusGrid(16, 0.0, 1.0, 0.1), seed=0)

    def test_white_variance(self):
        """Test white increments have variance dt / dx"""
        grid = TorusGrid(16, 0.0, 1.0, 1.0 / 1024)
        noise = sample_noise(CovarianceSpec(is_white=True), grid, seed=2)
        assert noise.mode == "lattice"
        assert np.var(noise.increments) == pytest.approx(grid.dt / grid.dx, rel=0.1)

    def test_iter_increments_order(self, smooth_noise):
        """Test iteration yields steps in order"""
        steps = [step for step, _ in smooth_noise.iter_increments(10, 700, chunk=64)]
        assert steps == list(range(10, 700))
        _, increment = next(smooth_noise.iter_increments(42, 43))
        np.testing.assert_array_equal(increment, smooth_noise.increment(42))

    def test_out_of_range_block(self, smooth_noise):
        """Test steps beyond the grid"""
        with pytest.raises(GridError):
            smooth_noise.increment_block(990, 20)

    def test_zero_noise(self):
        """Test the vanishing realization"""
        noise = zero_noise(TorusGrid(16, 0.0, 1.0, 0.1))
        assert not np.any(noise.increments)


class TestShear:
    """Test suite for the shear transformation"""

    @pytest.fixture
    def noise(self):
        return sample_noise(SPEC, TorusGrid(16, 0.0, 1.0, 1.0 / 64), seed=9)

    def test_identity_at_time_zero(self, noise):
        """Test the step starting at t = 0 is unchanged"""
        np.testing.assert_allclose(shear_noise(noise, 0.8).increment(0), noise.increment(0), atol=1e-15)

    def test_translation_by_one_cell(self, noise):
        """Test xi(t, x - theta t) at theta t = dx"""
        sheared = shear_noise(noise, 1.0).increment(4)
        np.testing.assert_allclose(sheared, np.roll(noise.increment(4), 1), atol=1e-13)

    def test_shears_compose(self, noise):
        """Test shearing twice adds the parameters"""
        twice = shear_noise(shear_noise(noise, 0.3), 0.2)
        once = shear_noise(noise, 0.5)
        np.testing.assert_allclose(twice.increments, once.increments, atol=1e-14)

    def test_zero_shear_is_identity(self, noise):
        """Test theta = 0 returns the same realization"""
        assert shear_noise(noise, 0.0) is noise

    def test_white_shear_unsupported(self):
        """Test white noise cannot be sheared analytically"""
        with pytest.raises(CovarianceError):
            shear_noise(TestDataFactory.create_white_noise(), 0.5)
