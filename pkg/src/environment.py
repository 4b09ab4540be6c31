"""The particle driven by the stationary Burgers field and the environment it sees"""
from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from . import spectral
from .burgers import BurgersPath, burgers_trajectory
from .fokker_planck import DEFAULT_T_WARM, evolve_density, solve_g
from .models import CovarianceSpec, DomainError, PositivityLostError, TorusGrid
from .polymer import PathEnsemble, sample_forward_paths
from .stats import Aggregate, effective_sample_size, mean_ci, sign_test, weighted_mean_ci
from .torus_noise import NoiseRealization, sample_noise

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

ESS_THRESHOLD = 0.1


# ============================================================================
# Fokker-Planck propagator and the particle
# ============================================================================

@dataclass(frozen=True, eq=False)
class FPPropagator:
    """Quenched transition densities of the particle: column ``j`` starts at ``y_j`` at time ``s``"""
    theta: float
    s: float
    t: float
    T_warm: float
    grid: TorusGrid
    entries: FloatArray

    def column(self, y_index: int) -> FloatArray:
        return self.entries[:, y_index]

    @property
    def column_masses(self) -> FloatArray:
        return self.entries.sum(axis=0) * self.grid.dx


def proxy_path(
    noise: NoiseRealization, theta: float, s: float, t: float, T_warm: float = DEFAULT_T_WARM
) -> BurgersPath:
    """Warm-started stand-in for the global solution on ``[s, t]``."""
    return burgers_trajectory(noise, theta, T_warm - s, t)


def fp_propagator(
    noise: NoiseRealization,
    theta: float,
    s: float,
    t: float,
    *,
    T_warm: float = DEFAULT_T_WARM,
    path: BurgersPath | None = None,
) -> FPPropagator:
    """Evolve every grid Dirac from ``s`` to ``t`` under the Fokker-Planck step.

    Raises:
        DomainError: If ``t <= s``
    """
    if t <= s:
        raise DomainError(f"fp_propagator requires t > s (t={t}, s={s})")
    if path is None:
        path = proxy_path(noise, theta, s, t, T_warm)
    grid = noise.grid
    diracs = np.eye(grid.n_space) / grid.dx
    entries, _ = evolve_density(diracs, path, path.index_of(s), path.index_of(t))
    return FPPropagator(theta=theta, s=s, t=t, T_warm=T_warm, grid=grid, entries=entries)


def fp_mass_identity(
    noise: NoiseRealization, theta: float, t: float, T_warm: float = DEFAULT_T_WARM
) -> tuple[float, float]:
    """``int G_{0,-t}(0, y) dy`` against ``g(0, 0; -t)`` under the same warm-started drift."""
    path = proxy_path(noise, theta, -t, 0.0, T_warm)
    row_mass = float(fp_propagator(noise, theta, -t, 0.0, path=path).entries[0].sum() * noise.grid.dx)
    g = solve_g(noise, theta, t, drift_mode="global", T_warm=T_warm, path=path).field.values[0]
    return row_mass, float(g)


def sample_particle(
    noise: NoiseRealization,
    theta: float,
    t: float,
    n_paths: int,
    seed: int,
    *,
    record_times: Sequence[float] | None = None,
    T_warm: float = DEFAULT_T_WARM,
    path: BurgersPath | None = None,
) -> PathEnsemble:
    """Euler-Maruyama for ``dY = -U_theta(t, Y) dt + dB`` from ``Y_0 = 0``."""
    if path is None:
        path = proxy_path(noise, theta, 0.0, t, T_warm)
    return sample_forward_paths(path, np.zeros(n_paths), 0.0, record_times or [t], seed)


# ============================================================================
# Observables of the environment
# ============================================================================

@dataclass(frozen=True)
class Observable:
    """Functional of the slice ``u(t, Y + .)``, evaluated per path and clipped at ``bound``"""
    name: str
    function: Callable[[FloatArray, FloatArray], FloatArray]
    bound: float = 50.0

    def __call__(self, u: FloatArray, positions: FloatArray) -> tuple[FloatArray, int]:
        values = np.broadcast_to(self.function(u, positions), positions.shape).astype(np.float64)
        clipped = int(np.sum(np.abs(values) > self.bound))
        return np.clip(values, -self.bound, self.bound), clipped


def _u_at_particle(u: FloatArray, positions: FloatArray) -> FloatArray:
    return spectral.evaluate(u, np.mod(positions, 1.0))


DEFAULT_OBSERVABLES = (
    Observable("u00", _u_at_particle),
    Observable("u00_sq", lambda u, y: _u_at_particle(u, y) ** 2, bound=2500.0),
    Observable("max_u", lambda u, y: np.full(y.shape, np.max(u))),
    Observable("l2_u", lambda u, y: np.full(y.shape, np.mean(u**2)), bound=2500.0),
    Observable("one", lambda u, y: np.ones(y.shape)),
)


@dataclass(frozen=True)
class ObservableSet:
    observables: tuple[Observable, ...] = DEFAULT_OBSERVABLES

    @classmethod
    def select(cls, names: Sequence[str]) -> ObservableSet:
        known = {observable.name: observable for observable in DEFAULT_OBSERVABLES}
        missing = [name for name in names if name not in known]
        if missing:
            raise DomainError(f"Unknown observables: {missing}")
        return cls(tuple(known[name] for name in names))

    @property
    def names(self) -> list[str]:
        return [observable.name for observable in self.observables]


# ============================================================================
# Invariance and convergence
# ============================================================================

@dataclass(frozen=True)
class EnvironmentSetup:
    """Grid, forcing and proxy horizons shared by every seed"""
    n_space: int = 64
    dt: float = 1e-3
    covariance: CovarianceSpec = field(default_factory=CovarianceSpec)
    T_g: float = 6.0
    T_warm: float = DEFAULT_T_WARM
    n_paths: int = 200
    seed_base: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_space": self.n_space,
            "dt": self.dt,
            "covariance": self.covariance.to_dict(),
            "T_g": self.T_g,
            "T_warm": self.T_warm,
            "n_paths": self.n_paths,
            "seed_base": self.seed_base,
        }


@dataclass(frozen=True)
class EnvironmentSample:
    """One seed: the weight ``g~(0, 0)`` and path-averaged observables at each time"""
    seed: int
    weight: float
    values: dict[tuple[str, float], float]
    clipped: int = 0


def environment_sample(
    setup: EnvironmentSetup,
    theta: float,
    observables: ObservableSet,
    t_list: Sequence[float],
    seed: int,
) -> EnvironmentSample:
    """Simulate one environment: warm-started drift, weight from the Fokker-Planck run, particles."""
    t_max = max(t_list)
    horizon = setup.T_g + setup.T_warm
    grid = TorusGrid(setup.n_space, -horizon, t_max, setup.dt)
    noise = sample_noise(setup.covariance, grid, seed)
    path = burgers_trajectory(noise, theta, horizon, t_max)
    weight = float(solve_g(noise, theta, setup.T_g, drift_mode="global", path=path).field.values[0])
    times = sorted({0.0, *t_list})
    particles = sample_forward_paths(path, np.zeros(setup.n_paths), 0.0, times, seed)
    values: dict[tuple[str, float], float] = {}
    clipped = 0
    for t in times:
        u = path.u_pre[path.index_of(t)]
        for observable in observables.observables:
            per_path, n_clipped = observable(u, particles.at(t))
            values[(observable.name, t)] = float(per_path.mean())
            clipped += n_clipped
    if clipped:
        logger.warning(f"seed {seed}: {clipped} observable values clipped")
    return EnvironmentSample(seed=seed, weight=weight, values=values, clipped=clipped)


def environment_samples(
    setup: EnvironmentSetup,
    theta: float,
    observables: ObservableSet,
    t_list: Sequence[float],
    n_seeds: int,
) -> list[EnvironmentSample]:
    return [
        environment_sample(setup, theta, observables, t_list, setup.seed_base + rep)
        for rep in range(n_seeds)
    ]


@dataclass
class EnvironmentTable:
    """Tidy table with one row per (observable, t)"""
    rows: list[dict[str, Any]]
    weights_degenerate: bool = False
    effective_sample_size: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def estimate(self, name: str, t: float) -> dict[str, Any]:
        for row in self.rows:
            if row["observable"] == name and row["t"] == t:
                return row
        raise KeyError((name, t))


def _weights(samples: Sequence[EnvironmentSample]) -> tuple[FloatArray, float, bool]:
    weights = np.array([sample.weight for sample in samples])
    ess = effective_sample_size(weights)
    degenerate = ess < ESS_THRESHOLD * len(samples)
    if degenerate:
        logger.warning(f"importance weights degenerate: ESS={ess:.1f} of {len(samples)} seeds")
    return weights, ess, degenerate


def _row(name: str, t: float, aggregate: Aggregate, flag: bool, **extra: Any) -> dict[str, Any]:
    return {
        "observable": name,
        "t": t,
        "estimate": aggregate.mean,
        "stderr": aggregate.stderr,
        "ci_low": aggregate.ci_low,
        "ci_high": aggregate.ci_high,
        "weighted_flag": flag,
        **extra,
    }


def invariance_table(
    samples: Sequence[EnvironmentSample], observables: ObservableSet, t_list: Sequence[float]
) -> EnvironmentTable:
    """``E_Q F(omega_t)`` for each ``t``: seed averages weighted by ``g~(0, 0)``."""
    weights, ess, degenerate = _weights(samples)
    rows = []
    for name in observables.names:
        for t in [0.0, *t_list]:
            values = [sample.values[(name, t)] for sample in samples]
            rows.append(_row(name, t, weighted_mean_ci(values, weights), degenerate))
    return EnvironmentTable(rows, degenerate, ess)


def convergence_table(
    samples: Sequence[EnvironmentSample], observables: ObservableSet, t_list: Sequence[float]
) -> EnvironmentTable:
    """Unweighted ``E_P F(omega_t)`` against the weighted target ``E_P[F(omega) g~(0, 0)]``."""
    weights, ess, degenerate = _weights(samples)
    rows = []
    for name in observables.names:
        target = weighted_mean_ci([sample.values[(name, 0.0)] for sample in samples], weights)
        for t in t_list:
            values = np.array([sample.values[(name, t)] for sample in samples])
            estimate = mean_ci(values)
            rows.append(
                _row(name, t, estimate, degenerate, target=target.mean, gap=abs(estimate.mean - target.mean))
            )
    return EnvironmentTable(rows, degenerate, ess)


def invariance_test(
    theta: float,
    observables: ObservableSet,
    t_list: Sequence[float],
    n_seeds: int,
    setup: EnvironmentSetup | None = None,
) -> EnvironmentTable:
    setup = setup or EnvironmentSetup()
    samples = environment_samples(setup, theta, observables, t_list, n_seeds)
    return invariance_table(samples, observables, t_list)


def convergence_test(
    theta: float,
    observables: ObservableSet,
    t_list: Sequence[float],
    n_seeds: int,
    setup: EnvironmentSetup | None = None,
) -> EnvironmentTable:
    setup = setup or EnvironmentSetup()
    samples = environment_samples(setup, theta, observables, t_list, n_seeds)
    return convergence_table(samples, observables, t_list)


def gap_decrease_p_value(
    samples: Sequence[EnvironmentSample], name: str, t_early: float, t_late: float
) -> float:
    """Sign test that the per-seed distance to the weighted target shrinks from ``t_early`` to ``t_late``."""
    weights, _, _ = _weights(samples)
    target = weighted_mean_ci([sample.values[(name, 0.0)] for sample in samples], weights).mean
    early = np.array([abs(sample.values[(name, t_early)] - target) for sample in samples])
    late = np.array([abs(sample.values[(name, t_late)] - target) for sample in samples])
    return sign_test(early - late)


# ============================================================================
# Limiting shock ODE
# ============================================================================

@dataclass(frozen=True, eq=False)
class ShockTrajectory:
    """Lifted shock positions ``b_t``"""
    times: FloatArray
    positions: FloatArray

    @property
    def wrapped(self) -> FloatArray:
        return np.mod(self.positions, 1.0)

    @property
    def winding(self) -> int:
        return int(np.rint(self.positions[-1] - self.positions[0]))


def _velocity_profiles(u_fields: FloatArray, g_fields: FloatArray) -> FloatArray:
    if np.min(g_fields) <= 0:
        raise PositivityLostError("g vanished along the shock trajectory")
    return -u_fields - 0.5 * spectral.log_derivative(g_fields, axis=1, dealias=False)


def integrate_shock(
    times: FloatArray,
    u_fields: FloatArray,
    g_fields: FloatArray,
    b0: float,
    substeps: int = 1,
) -> ShockTrajectory:
    """Heun integration of ``db/dt = -u(t, b) - 0.5 d_x log g(t, b)``.

    Fields are given at ``times`` (rows), interpolated linearly in time and spectrally in space.
    """
    velocities = _velocity_profiles(np.asarray(u_fields), np.asarray(g_fields))

    def velocity(j: int, fraction: float, b: float) -> float:
        profile = (1.0 - fraction) * velocities[j] + fraction * velocities[min(j + 1, len(times) - 1)]
        return float(spectral.evaluate(profile, np.mod(b, 1.0)))

    positions = np.empty(len(times))
    positions[0] = b = b0
    for j in range(len(times) - 1):
        h = (times[j + 1] - times[j]) / substeps
        for k in range(substeps):
            start, end = k / substeps, (k + 1) / substeps
            slope = velocity(j, start, b)
            predictor = b + h * slope
            b = b + 0.5 * h * (slope + velocity(j, end, predictor))
        positions[j + 1] = b
    return ShockTrajectory(np.asarray(times, dtype=np.float64), positions)


def shock_ode(
    noise: NoiseRealization,
    theta: float,
    b0: float,
    t_end: float,
    *,
    T_g: float = 6.0,
    T_warm: float = DEFAULT_T_WARM,
    substeps: int = 1,
) -> ShockTrajectory:
    """Integrate the limiting shock ODE on ``[0, t_end]`` with the warm-started drift and ``g~``."""
    path = burgers_trajectory(noise, theta, T_g + T_warm, t_end)
    solution = solve_g(noise, theta, T_g, drift_mode="global", t_end=t_end, record=True, path=path)
    first, last = path.index_of(0.0), path.index_of(t_end)
    offset = solution.history.shape[0] - (last - first + 1)
    return integrate_shock(
        path.times[first:last + 1],
        path.u_pre[first:last + 1],
        solution.history[offset:],
        b0,
        substeps,
    )
