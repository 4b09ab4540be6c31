"""Tests for grids, fields and the exception hierarchy"""
import numpy as np
import pytest

from src.models import (
    BJSError,
    ConservationError,
    CovarianceError,
    CovarianceSpec,
    DensityField,
    DomainError,
    GridError,
    PersistenceError,
    PositivityLostError,
    PropagatorMatrix,
    ScalarField,
    StepTooLargeError,
    TorusGrid,
)


class TestTorusGrid:
    """Test suite for the space-time grid"""

    def test_step_count(self):
        """Test the number of steps in the window"""
        grid = TorusGrid(32, -1.0, 0.5, 0.01)
        assert grid.n_steps == 150
        assert grid.dx == pytest.approx(1 / 32)
        assert grid.times[0] == -1.0
        assert grid.times[-1] == pytest.approx(0.5)

    def test_index_of_round_trip(self):
        """Test absolute times map to step indices"""
        grid = TorusGrid(16, -2.0, 0.0, 1e-3)
        assert grid.index_of(-2.0) == 0
        assert grid.index_of(-1.0) == 1000
        assert grid.index_of(0.0) == grid.n_steps
        assert grid.time_at(grid.index_of(-0.25)) == pytest.approx(-0.25)

    def test_off_grid_time_rejected(self):
        """Test times between grid points raise"""
        grid = TorusGrid(16, 0.0, 1.0, 0.1)
        with pytest.raises(GridError):
            grid.index_of(0.05)
        with pytest.raises(GridError):
            grid.index_of(1.5)

    @pytest.mark.parametrize("n_space", [6, 15])
    def test_invalid_space_resolution(self, n_space):
        """Test odd or tiny grids are rejected"""
        with pytest.raises(GridError):
            TorusGrid(n_space, 0.0, 1.0, 0.1)

    def test_step_must_divide_window(self):
        """Test dt that does not divide the window"""
        with pytest.raises(GridError):
            TorusGrid(16, 0.0, 1.0, 0.3)

    def test_space_index_of(self):
        """Test torus points reduce modulo 1"""
        grid = TorusGrid(16, 0.0, 1.0, 0.1)
        assert grid.space_index_of(0.25) == 4
        assert grid.space_index_of(1.25) == 4
        assert grid.space_index_of(-0.0625) == 15
        with pytest.raises(GridError):
            grid.space_index_of(0.01)


class TestCovarianceSpec:
    """Test suite for covariance specifications"""

    def test_variance_and_modes(self):
        """Test R(0) and the mode count"""
        spec = CovarianceSpec(mode_weights=(0.1, 0.5, 0.25))
        assert spec.variance == pytest.approx(0.85)
        assert spec.n_modes == 2
        assert not spec.is_zero

    def test_negative_weight_rejected(self):
        """Test negative mode weights"""
        with pytest.raises(CovarianceError):
            CovarianceSpec(mode_weights=(0.0, -1.0))

    def test_white_serialization(self):
        """Test white specs serialize their amplitude"""
        data = CovarianceSpec(is_white=True, white_amplitude=2.0).to_dict()
        assert data["white"] is True
        assert data["white_amplitude"] == 2.0


class TestFields:
    """Test suite for scalar, density and propagator containers"""

    @pytest.fixture
    def grid(self):
        return TorusGrid(16, 0.0, 1.0, 0.1)

    def test_scalar_field_is_read_only(self, grid):
        """Test field values cannot be mutated"""
        field = ScalarField(grid, 0.0, np.arange(16.0))
        with pytest.raises(ValueError):
            field.values[0] = 1.0

    def test_scalar_field_shape(self, grid):
        """Test shape validation"""
        with pytest.raises(GridError):
            ScalarField(grid, 0.0, np.zeros(8))

    def test_density_mass(self, grid):
        """Test unit mass is enforced"""
        assert DensityField.uniform(grid, 0.0).mass == pytest.approx(1.0)
        with pytest.raises(ConservationError):
            DensityField(grid, 0.0, 2.0 * np.ones(16))

    def test_density_negative(self, grid):
        """Test negative densities"""
        values = np.ones(16)
        values[0], values[1] = -0.5, 2.5
        with pytest.raises(PositivityLostError):
            DensityField(grid, 0.0, values)

    def test_normalized(self, grid):
        """Test rescaling an arbitrary profile"""
        density = DensityField.normalized(grid, 0.0, np.arange(1.0, 17.0))
        assert density.mass == pytest.approx(1.0, abs=1e-14)

    def test_propagator_time_order(self, grid):
        """Test s <= t for propagators"""
        with pytest.raises(DomainError):
            PropagatorMatrix(grid, 1.0, 0.5, np.eye(16))

    def test_column_masses(self, grid):
        """Test column masses of a scaled identity"""
        matrix = PropagatorMatrix(grid, 0.0, 0.5, np.eye(16) * 16)
        np.testing.assert_allclose(matrix.column_masses, 1.0)


class TestExceptions:
    """Test suite for the exception hierarchy"""

    def test_common_base(self):
        """Test every error derives from BJSError"""
        for error in (GridError, CovarianceError, DomainError, PositivityLostError, ConservationError):
            assert issubclass(error, BJSError)

    def test_step_too_large_carries_bound(self):
        """Test the admissible step is reported"""
        error = StepTooLargeError(0.1, 0.01)
        assert error.admissible == 0.01
        assert "admissible" in str(error)

    def test_persistence_error_path(self):
        """Test the failing path is kept"""
        error = PersistenceError("out/x.csv", "disk full")
        assert error.path == "out/x.csv"
        assert "disk full" in str(error)
