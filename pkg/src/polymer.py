"""Directed polymers on the cylinder: endpoint and mid-point densities, path sampling"""
from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import spectral
from .burgers import BurgersPath, burgers_from_flat, burgers_trajectory, dirac_field_matrix, shear_target
from .models import DensityField, DomainError, GridError, TorusGrid
from .she_engine import MATRIX_ROUNDOFF, adjoint_evolve, evolve, evolve_flat, propagator_rows
from .torus_noise import NoiseRealization, shear_noise

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


# ============================================================================
# Densities from propagators
# ============================================================================

@dataclass(frozen=True)
class BaseMeasure:
    """Uniform measure ``m`` on the torus or a Dirac mass at a grid point"""
    kind: str = "uniform"
    point: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "dirac"):
            raise ValueError(f"Unknown base measure: {self.kind}")

    @classmethod
    def uniform(cls) -> BaseMeasure:
        return cls("uniform")

    @classmethod
    def dirac(cls, point: float) -> BaseMeasure:
        return cls("dirac", point)

    def weights(self, grid: TorusGrid) -> FloatArray:
        """Grid density of the measure."""
        if self.kind == "uniform":
            return np.ones(grid.n_space)
        values = np.zeros(grid.n_space)
        values[grid.space_index_of(self.point)] = 1.0 / grid.dx
        return values


def _clipped_density(grid: TorusGrid, time: float, values: FloatArray) -> DensityField:
    """Normalize a kernel-derived profile, zeroing roundoff-level negatives."""
    floor = -MATRIX_ROUNDOFF * np.max(values)
    if np.min(values) < floor:
        raise DomainError(f"profile has a significant negative entry {np.min(values):.3e}")
    return DensityField.normalized(grid, time, np.maximum(values, 0.0))


@dataclass(frozen=True, eq=False)
class EndpointDensity:
    """``rho_f(t, x; s, nu)`` (over ``x``) or ``rho_b(t, nu; s, y)`` (over ``y``)"""
    direction: str
    t: float
    s: float
    nu: BaseMeasure
    field: DensityField


def endpoint_density(
    noise: NoiseRealization, direction: str, t: float, s: float, nu: BaseMeasure
) -> EndpointDensity:
    """Endpoint density of the forward or backward polymer between times ``s < t``.

    The forward density is ``int G_{t,s}(x, y) nu(dy)`` normalized over ``x``; the
    backward density is ``int G_{t,s}(x, y) nu(dx)`` normalized over ``y``.

    Raises:
        DomainError: If ``t <= s``
    """
    if t <= s:
        raise DomainError(f"endpoint density requires t > s (t={t}, s={s})")
    grid = noise.grid
    weights = nu.weights(grid)
    if direction == "forward":
        values = evolve(noise, weights, s, t)[t]
        time = t
    elif direction == "backward":
        values = adjoint_evolve(noise, weights[None, :], s, t)[0]
        time = s
    else:
        raise ValueError(f"Unknown direction: {direction}")
    return EndpointDensity(direction, t, s, nu, _clipped_density(grid, time, values))


@dataclass(frozen=True, eq=False)
class MidpointDensity:
    """``rho_theta(0, x; s, .; -T)``: quenched law of the polymer at backward time ``s``"""
    theta: float
    x: float
    s: float
    T: float
    field: DensityField
    rounding_error: float = 0.0


def _sheared(noise: NoiseRealization, theta: float) -> NoiseRealization:
    if theta == 0.0:
        return noise
    return shear_noise(noise, theta)


def _check_times(s: float, T: float) -> None:
    if not 0 < s <= T:
        raise DomainError(f"mid-point density requires 0 < s <= T (s={s}, T={T})")


def _midpoint_profiles(
    noise: NoiseRealization, theta: float, x_indices: Sequence[int], s: float, T: float
) -> FloatArray:
    """Mid-point densities in the sheared variable ``y' = y - theta s``, one row per start cell."""
    sheared = _sheared(noise, theta)
    rows = propagator_rows(sheared, x_indices, -s, 0.0)
    flat = evolve_flat(sheared, -T, [-s])[-s].values
    weighted = rows * flat[None, :]
    return weighted / (weighted.sum(axis=1, keepdims=True) * noise.grid.dx)


def midpoint_density(noise: NoiseRealization, theta: float, x: float, s: float, T: float) -> MidpointDensity:
    """``G_{0,-s}(x, y - theta s) G_{-s,-T}(y - theta s, -) / G_{0,-T}(x, -)`` over ``y``.

    Args:
        noise: Smooth realization covering ``[-T, 0]``
        theta: Tilt
        x: Start point at time 0, a grid point
        s: Interior backward time, ``0 < s <= T``
        T: Horizon

    Returns:
        The density with the distance lost to rounding ``theta s`` onto the grid
    """
    _check_times(s, T)
    grid = noise.grid
    index = grid.space_index_of(x)
    profile = _midpoint_profiles(noise, theta, [index], s, T)[0]
    offset, rounding = shear_target(grid, 0.0, -theta, s)
    values = np.roll(np.maximum(profile, 0.0), offset)
    return MidpointDensity(
        theta=theta,
        x=x,
        s=s,
        T=T,
        field=_clipped_density(grid, 0.0, values),
        rounding_error=rounding,
    )


def midpoint_log_derivative_residual(
    noise: NoiseRealization,
    theta: float,
    x: float,
    s: float,
    T: float,
    method: str = "forward",
) -> float:
    """``sup_y |d_x rho - rho (U(0, x; -s, y) - u(0, x; -T))|`` at the start point ``x``.

    ``method="forward"`` differentiates in ``x`` by a forward difference over neighboring
    start cells; ``"spectral"`` differentiates the full matrix of densities spectrally.
    """
    _check_times(s, T)
    grid = noise.grid
    index = grid.space_index_of(x)
    dirac_u = dirac_field_matrix(noise, theta, s)[index]
    u = burgers_from_flat(noise, theta, T, 0.0).field.values[index]
    if method == "forward":
        neighbors = [index, (index + 1) % grid.n_space]
        density, shifted = _midpoint_profiles(noise, theta, neighbors, s, T)
        slope = (shifted - density) / grid.dx
    elif method == "spectral":
        densities = _midpoint_profiles(noise, theta, range(grid.n_space), s, T)
        density = densities[index]
        slope = spectral.derivative(densities, axis=0, dealias=False)[index]
    else:
        raise ValueError(f"Unknown method: {method}")
    return float(np.max(np.abs(slope - density * (dirac_u - u))))


def mixing_gap(
    noise: NoiseRealization, theta: float, x: float, s: float, T1: float, T2: float
) -> float:
    """L1 distance between mid-point densities for horizons ``T1 <= T2`` under common noise."""
    if not s <= T1 <= T2:
        raise DomainError(f"mixing_gap requires s <= T1 <= T2 (s={s}, T1={T1}, T2={T2})")
    if T1 == T2:
        return 0.0
    first = midpoint_density(noise, theta, x, s, T1).field
    second = midpoint_density(noise, theta, x, s, T2).field
    return float(np.sum(np.abs(first.values - second.values)) * noise.grid.dx)


# ============================================================================
# SDE path sampling
# ============================================================================

@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Lifted (real-line) positions of independent paths at the recorded times"""
    times: FloatArray
    positions: FloatArray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.positions.shape[1]

    @property
    def start(self) -> FloatArray:
        return self.positions[0]

    @property
    def terminal(self) -> FloatArray:
        return self.positions[-1]

    @property
    def winding(self) -> NDArray[np.int64]:
        """Integer net displacement over the sampled window."""
        return np.rint(self.terminal - self.start).astype(np.int64)

    def at(self, t: float) -> FloatArray:
        matches = np.flatnonzero(np.abs(self.times - t) <= 1e-9 * max(1.0, abs(t)))
        if not matches.size:
            raise GridError(f"time {t} was not recorded")
        return self.positions[matches[0]]

    def wrapped(self, t: float) -> FloatArray:
        """Positions reduced to the torus ``[0, 1)``."""
        return np.mod(self.at(t), 1.0)


def path_generator(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def euler_maruyama(
    drifts: Iterator[FloatArray],
    start: FloatArray,
    n_steps: int,
    dt: float,
    rng: np.random.Generator,
    record: set[int],
) -> dict[int, FloatArray]:
    """Integrate ``dX = b(X) dt + dB`` with one drift profile per step.

    Args:
        drifts: Yields the drift profile (cell values, linearly interpolated in space) for each step
        start: Initial lifted positions
        n_steps: Number of steps
        dt: Step size
        rng: Source of the Brownian increments
        record: Step counts after which positions are kept (0 is the start)

    Returns:
        Mapping from recorded step count to positions
    """
    positions = np.array(start, dtype=np.float64)
    recorded = {0: positions.copy()} if 0 in record else {}
    scale = np.sqrt(dt)
    for k in range(n_steps):
        profile = next(drifts)
        positions = positions + spectral.periodic_interp(profile, positions) * dt
        positions = positions + scale * rng.standard_normal(positions.shape[0])
        if k + 1 in record:
            recorded[k + 1] = positions.copy()
    return recorded


def _step_drift(path: BurgersPath, j: int) -> FloatArray:
    """Drift over ``[t_j, t_{j+1}]``: average of the field after the kick at ``t_j`` and before ``t_{j+1}``."""
    return 0.5 * (path.u_post[j] + path.u_pre[j + 1])


def _record_steps(path: BurgersPath, first: int, offsets: Sequence[float], sign: int) -> dict[int, float]:
    steps = {}
    for offset in offsets:
        index = path.index_of(path.times[first] + sign * offset)
        steps[abs(index - first)] = path.times[index]
    return steps


def sample_polymer_paths(
    noise: NoiseRealization,
    theta: float,
    x: float,
    T: float,
    n_paths: int,
    seed: int,
    *,
    record_times: Sequence[float] | None = None,
    path: BurgersPath | None = None,
) -> PathEnsemble:
    """Sample the polymer from ``(0, x)`` backward to ``-T``: ``dX_s = u_theta(-s, X_s; -T) ds + dB_s``.

    Args:
        noise: Forcing covering ``[-T, 0]``
        theta: Tilt
        x: Start point
        T: Horizon
        n_paths: Number of independent paths
        seed: Brownian seed
        record_times: Backward times ``s`` to record besides ``s = 0``; ``[T]`` by default
        path: Precomputed Burgers drift on ``[-T, 0]``

    Returns:
        Ensemble indexed by the backward time ``s``
    """
    if path is None:
        path = burgers_trajectory(noise, theta, T, 0.0)
    last = path.index_of(0.0)
    first = path.index_of(-T)
    record = _record_steps(path, last, [0.0, *(record_times or [T])], -1)
    drifts = (_step_drift(path, j) for j in range(last - 1, first - 1, -1))
    recorded = euler_maruyama(drifts, np.full(n_paths, x), last - first, path.dt, path_generator(seed), set(record))
    order = sorted(record)
    return PathEnsemble(
        times=np.array([step * path.dt for step in order]),
        positions=np.array([recorded[step] for step in order]),
        seed=seed,
    )


def sample_forward_paths(
    path: BurgersPath,
    start: FloatArray,
    t0: float,
    record_times: Sequence[float],
    seed: int,
) -> PathEnsemble:
    """Sample ``dY = -u(t, Y) dt + dB`` forward from ``t0`` along a Burgers path.

    Returns:
        Ensemble indexed by absolute time
    """
    first = path.index_of(t0)
    last = max(path.index_of(t) for t in record_times)
    record = _record_steps(path, first, [0.0, *(t - t0 for t in record_times)], 1)
    drifts = (-_step_drift(path, j) for j in range(first, last))
    recorded = euler_maruyama(drifts, start, last - first, path.dt, path_generator(seed, 1), set(record))
    order = sorted(record)
    return PathEnsemble(
        times=np.array([record[step] for step in order]),
        positions=np.array([recorded[step] for step in order]),
        seed=seed,
    )


def sample_uniform_start_paths(
    noise: NoiseRealization,
    theta: float,
    T: float,
    n_paths: int,
    seed: int,
    record_times: Sequence[float],
    *,
    path: BurgersPath | None = None,
) -> PathEnsemble:
    """The diffusion with drift ``-u_theta(., .; -T)`` started uniformly at ``-T``.

    Its quenched density at time ``t`` is ``g_theta(t, .; -T)``.
    """
    if path is None:
        path = burgers_trajectory(noise, theta, T, max(record_times))
    rng = path_generator(seed, 2)
    start = rng.uniform(0.0, 1.0, n_paths)
    return sample_forward_paths(path, start, -T, record_times, seed)

