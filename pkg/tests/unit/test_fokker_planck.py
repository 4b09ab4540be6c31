"""Tests for the Fokker-Planck solver, the potential and the explicit formula"""
import numpy as np
import pytest

from src.burgers import burgers_trajectory
from src.fokker_planck import (
    admissible_dt,
    bernoulli,
    density_from_potential,
    derivative_identity_error,
    drift_path,
    evolve_density,
    fp_step,
    g_explicit,
    l1_distance,
    l1_forgetting,
    potential_field,
    potential_from_density,
    positivity_guide,
    quadrature_nodes,
    solve_g,
    tail_bound,
)
from src.models import DensityField, DomainError, ScalarField, StepTooLargeError, TorusGrid
from tests.fixtures.sample_data import TestDataFactory


@pytest.fixture
def grid():
    return TorusGrid(32, 0.0, 1.0, 1e-3)


class TestScheme:
    """Test suite for the Chang-Cooper step"""

    def test_bernoulli(self):
        """Test B(0) = 1 and B(z) - B(-z) = -z"""
        z = np.array([-3.0, -1e-10, 0.0, 1e-10, 2.5])
        values = bernoulli(z)
        assert values[2] == 1.0
        np.testing.assert_allclose(bernoulli(z) - bernoulli(-z), -z, atol=1e-12)
        assert np.all(values > 0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_admissible_bound(self, grid, seed):
        """Test the exact bound is at least dx^2 / (1 + |u| dx) for a resolved drift"""
        a, b = 4.0 * np.random.default_rng(seed).standard_normal(2)
        u = a * np.sin(2 * np.pi * grid.x) + b * np.cos(4 * np.pi * grid.x) + 1.0
        bound = admissible_dt(u, grid.dx)
        assert bound >= grid.dx**2 / (1 + np.max(np.abs(u)) * grid.dx) * (1 - 1e-12)
        assert positivity_guide(np.max(np.abs(u)), grid.dx) <= bound

    def test_guide_holds_for_rough_drift(self, grid):
        """Test dx^2 / (1 + 2|u| dx) is admissible for any drift"""
        u = np.where(np.arange(32) < 16, 10.0, -10.0)
        assert positivity_guide(10.0, grid.dx) <= admissible_dt(u, grid.dx) * (1 + 1e-12)

    def test_step_too_large(self, grid):
        """Test steps above the bound raise with the admissible value"""
        u = np.zeros(32)
        with pytest.raises(StepTooLargeError) as info:
            fp_step(DensityField.uniform(grid, 0.0), u, 0.01)
        assert info.value.admissible == pytest.approx(grid.dx**2)

    def test_step_conserves_mass(self, grid):
        """Test mass and positivity after a step with a rough drift"""
        g = TestDataFactory.create_cosine_density(grid, amplitude=0.9)
        u = 3.0 * np.sin(2 * np.pi * grid.x) + np.cos(6 * np.pi * grid.x)
        result = fp_step(g, u, 0.5 * admissible_dt(u, grid.dx))
        assert result.mass == pytest.approx(1.0, abs=1e-13)
        assert np.min(result.values) >= 0

    def test_constant_drift_keeps_uniform(self, grid):
        """Test the uniform density is stationary for a constant drift"""
        result = fp_step(DensityField.uniform(grid, 0.0), np.full(32, 0.8), 5e-4)
        np.testing.assert_allclose(result.values, 1.0, atol=1e-14)

    def test_upwind_transport(self, grid):
        """Test the density moves against the drift u"""
        g = TestDataFactory.create_cosine_density(grid, amplitude=0.5)
        u = np.full(32, 2.0)
        values = g.values
        for _ in range(100):
            values = fp_step(DensityField(grid, 0.0, values), u, 5e-4).values
        centre = np.angle(np.sum(values * np.exp(2j * np.pi * grid.x))) / (2 * np.pi)
        assert centre == pytest.approx(-0.1, abs=0.01)


class TestSolveG:
    """Test suite for g_theta on a finite horizon"""

    def test_uniform_without_noise(self, quiet_noise):
        """Test g stays uniform when u is constant"""
        solution = solve_g(quiet_noise, 0.6, 1.0)
        np.testing.assert_allclose(solution.field.values, 1.0, atol=1e-12)

    def test_mass_and_history(self, smooth_noise):
        """Test recorded densities have unit mass"""
        solution = solve_g(smooth_noise, 0.2, 1.0, record=True)
        assert solution.history.shape == (1001, 32)
        assert solution.at(-0.5).mass == pytest.approx(1.0, abs=1e-10)
        assert solution.field.mass == pytest.approx(1.0, abs=1e-10)

    def test_history_required(self, smooth_noise):
        """Test at() without a recorded history"""
        with pytest.raises(DomainError):
            solve_g(smooth_noise, 0.0, 0.5).at(-0.25)

    def test_global_drift_window(self):
        """Test the warm-started drift covers only [-T, 0]"""
        noise = TestDataFactory.create_noise(t_start=-1.5)
        path = drift_path(noise, 0.0, 0.5, "global", T_warm=1.0)
        assert path.times[0] == pytest.approx(-0.5)
        assert path.T_start == pytest.approx(-1.5)
        solution = solve_g(noise, 0.0, 0.5, drift_mode="global", T_warm=1.0)
        assert solution.T_warm == 1.0

    def test_unknown_drift_mode(self, smooth_noise):
        """Test drift modes are validated"""
        with pytest.raises(ValueError):
            drift_path(smooth_noise, 0.0, 0.5, "frozen")

    def test_columns_evolve_independently(self, smooth_noise):
        """Test matrix-valued evolution of Dirac columns"""
        path = burgers_trajectory(smooth_noise, 0.0, 1.0)
        dx = smooth_noise.grid.dx
        diracs = np.eye(32) / dx
        columns, _ = evolve_density(diracs, path, 500, 1000)
        single, _ = evolve_density(diracs[:, 7].copy(), path, 500, 1000)
        np.testing.assert_allclose(columns[:, 7], single, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(columns.sum(axis=0) * dx, 1.0, atol=1e-10)

    def test_identity_without_noise(self, quiet_noise):
        """Test (u_{theta+eps} - u_theta) / eps = g_theta = 1 without forcing"""
        assert derivative_identity_error(quiet_noise, 0.3, 0.1, 1.0) < 1e-9

    def test_forgetting(self):
        """Test the distance between initial data shrinks with the horizon"""
        noise = TestDataFactory.create_noise(t_start=-1.0)
        other = TestDataFactory.create_cosine_density(noise.grid)
        distances = l1_forgetting(noise, 0.0, [0.25, 1.0], other)
        assert distances[1.0] < distances[0.25] < l1_distance(other, DensityField.uniform(noise.grid, 0.0))


class TestPotential:
    """Test suite for the potential representation"""

    def test_round_trip(self, grid):
        """Test g -> phi -> 1 + phi' returns g"""
        g = ScalarField(grid, 0.0, 1.0 + 0.5 * np.cos(2 * np.pi * grid.x) + 0.2 * np.sin(4 * np.pi * grid.x))
        phi = potential_from_density(g)
        np.testing.assert_allclose(density_from_potential(phi).values, g.values, atol=1e-12)
        assert phi.is_admissible()

    def test_inadmissible(self, grid):
        """Test phi' < -1 somewhere"""
        g = ScalarField(grid, 0.0, 1.0 + 2.0 * np.cos(2 * np.pi * grid.x))
        assert not potential_from_density(g).is_admissible()

    def test_flat_without_noise(self, quiet_noise):
        """Test phi = theta T when nothing winds"""
        phi = potential_field(quiet_noise, 0.5, 1.0)
        np.testing.assert_allclose(phi.field.values, 0.5, atol=1e-12)
        np.testing.assert_allclose(phi.density_values, 1.0, atol=1e-10)


class TestExplicitFormula:
    """Test suite for the quadrature of the explicit formula"""

    def test_nodes(self):
        """Test geometric nodes snapped to the grid"""
        nodes = quadrature_nodes(2.0, 1e-3, ratio=0.5, s_min=0.1)
        np.testing.assert_allclose(nodes, [0.125, 0.25, 0.5, 1.0, 2.0])

    def test_nodes_never_zero(self):
        """Test nodes below dt snap to one step"""
        assert quadrature_nodes(0.01, 1e-3, s_min=1e-5)[0] == pytest.approx(1e-3)

    def test_unit_mass(self, smooth_noise):
        """Test the correction integrates to zero"""
        result = g_explicit(smooth_noise, 0.25, 0.5, 1.0, ratio=0.7, s_min=0.01)
        assert result.mass == pytest.approx(1.0, abs=1e-9)
        assert result.tail_estimate >= 0

    def test_no_noise_gives_one(self, quiet_noise):
        """Test g~ = 1 without forcing"""
        result = g_explicit(quiet_noise, 0.4, 0.5, 1.0, ratio=0.7, s_min=0.01)
        np.testing.assert_allclose(result.field.values, 1.0, atol=1e-9)

    def test_domain(self, smooth_noise):
        """Test s_max must not exceed the proxy horizon"""
        with pytest.raises(DomainError):
            g_explicit(smooth_noise, 0.0, 2.0, 1.0)

    def test_white_noise_rejected(self):
        """Test the formula needs smooth noise"""
        with pytest.raises(DomainError):
            g_explicit(TestDataFactory.create_white_noise(), 0.0, 0.1, 0.25)

    def test_tail_bound_exponential(self):
        """Test an exponentially decaying integrand gives head plus the fitted tail integral"""
        nodes = np.array([0.1, 0.5, 1.0, 2.0])
        integrand = np.exp(-2.0 * nodes)[:, None] * np.array([1.0, -0.5])
        expected = 0.1 * np.exp(-0.2) + np.exp(-4.0) / 2.0
        assert tail_bound(nodes, integrand) == pytest.approx(expected, rel=1e-12)

    def test_tail_bound_without_decay(self):
        """Test a growing integrand has no finite tail bound"""
        nodes = np.array([0.5, 1.0, 2.0])
        integrand = np.array([[0.1], [0.2], [0.3]])
        assert tail_bound(nodes, integrand) == np.inf

    def test_tail_bound_vanishing_end(self):
        """Test a vanishing last node leaves only the head term"""
        nodes = np.array([0.25, 1.0])
        integrand = np.array([[0.4, 0.0], [0.0, 0.0]])
        assert tail_bound(nodes, integrand) == pytest.approx(0.1)
