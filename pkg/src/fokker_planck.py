"""The derivative field g_theta: Fokker-Planck solver, potential and explicit limit formula"""
from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import spectral
from .burgers import BurgersPath, burgers_from_flat, burgers_trajectory
from .models import (
    ConservationError,
    DensityField,
    DomainError,
    MASS_TOLERANCE,
    PositivityLostError,
    ScalarField,
    StepTooLargeError,
    TorusGrid,
)
from .she_engine import evolve_flat, first_moment_field, propagator_sweep
from .torus_noise import NoiseRealization, shear_noise

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

DIFFUSIVITY = 0.5
DEFAULT_T_WARM = 10.0
TAIL_WARNING = 0.05


# ============================================================================
# Chang-Cooper finite volume step
# ============================================================================

def bernoulli(z: FloatArray) -> FloatArray:
    """``B(z) = z / (exp(z) - 1)`` with ``B(0) = 1``."""
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 - 0.5 * z, safe / np.expm1(safe))


def face_drift(u: FloatArray) -> FloatArray:
    """Drift at faces ``i + 1/2`` from cell values."""
    return 0.5 * (u + np.roll(u, -1, axis=0))


def _weights(u: FloatArray, dx: float) -> tuple[FloatArray, FloatArray]:
    """Exponential-fitting weights ``B(-Pe), B(Pe)`` at faces for the velocity ``-u``."""
    peclet = -face_drift(u) * dx / DIFFUSIVITY
    return bernoulli(-peclet), bernoulli(peclet)


def admissible_dt(drift_profile: FloatArray, dx: float) -> float:
    """Largest step keeping every update coefficient nonnegative."""
    backward, forward = _weights(np.asarray(drift_profile, dtype=np.float64), dx)
    outflow = DIFFUSIVITY * (backward + np.roll(forward, 1, axis=0)) / dx**2
    return float(1.0 / np.max(outflow))


def positivity_guide(speed: float, dx: float) -> float:
    """A step below :func:`admissible_dt` for any drift bounded by ``speed``."""
    return dx**2 / (1.0 + 2.0 * speed * dx)


def _update(values: FloatArray, drift_profile: FloatArray, dt: float, dx: float) -> FloatArray:
    """Flux-form step of ``dg/dt = 0.5 g'' + (u g)'`` written with nonnegative coefficients."""
    backward, forward = _weights(drift_profile, dx)
    if values.ndim == 2 and backward.ndim == 1:
        backward, forward = backward[:, None], forward[:, None]
    ratio = DIFFUSIVITY * dt / dx**2
    diagonal = 1.0 - ratio * (backward + np.roll(forward, 1, axis=0))
    return (
        diagonal * values
        + ratio * forward * np.roll(values, -1, axis=0)
        + ratio * np.roll(backward, 1, axis=0) * np.roll(values, 1, axis=0)
    )


def _check_density(values: FloatArray, dx: float, time: float) -> None:
    if np.min(values) < 0:
        raise PositivityLostError(f"density negative at t={time:.6g}")
    mass = np.sum(values, axis=0) * dx
    if np.max(np.abs(mass - 1.0)) > MASS_TOLERANCE:
        raise ConservationError(f"density mass drifted to {np.max(np.abs(mass - 1.0)):.3e} at t={time:.6g}")


def fp_step(g: DensityField, drift_profile: FloatArray, dt: float) -> DensityField:
    """One Chang-Cooper step of ``dg/dt = 0.5 g'' + (u g)'``.

    Args:
        g: Current density
        drift_profile: ``u(t, .)`` at cell centres
        dt: Step size

    Returns:
        Density at ``g.time + dt``

    Raises:
        StepTooLargeError: If ``dt`` exceeds the positivity bound for this drift
    """
    drift_profile = np.asarray(drift_profile, dtype=np.float64)
    bound = admissible_dt(drift_profile, g.grid.dx)
    if dt > bound * (1.0 + 1e-12):
        raise StepTooLargeError(dt, bound)
    values = _update(g.values, drift_profile, dt, g.grid.dx)
    return DensityField(g.grid, g.time + dt, values)


def evolve_density(
    values: FloatArray,
    path: BurgersPath,
    first: int,
    last: int,
    *,
    record: bool = False,
) -> tuple[FloatArray, FloatArray | None]:
    """Advance densities (``(n,)`` or columns ``(n, m)``) under a Burgers drift path.

    Step ``j`` of the path is split into positivity-admissible substeps; each substep uses
    the drift interpolated between ``u_post[j]`` and ``u_pre[j + 1]`` at its midpoint.

    Returns:
        Final values and, if ``record``, the history at every path time from ``first`` to ``last``
    """
    dx = path.grid.dx
    dt = path.grid.dt
    history = np.empty((last - first + 1,) + values.shape) if record else None
    if record:
        history[0] = values
    for j in range(first, last):
        start, end = path.u_post[j], path.u_pre[j + 1]
        speed = max(np.max(np.abs(start)), np.max(np.abs(end)))
        n_sub = max(1, math.ceil(dt / positivity_guide(speed, dx)))
        h = dt / n_sub
        for k in range(n_sub):
            fraction = (k + 0.5) / n_sub
            values = _update(values, (1.0 - fraction) * start + fraction * end, h, dx)
            _check_density(values, dx, path.times[j] + (k + 1) * h)
        if record:
            history[j + 1 - first] = values
    return values, history


# ============================================================================
# g_theta on a finite horizon
# ============================================================================

@dataclass(frozen=True, eq=False)
class GSolution:
    """``g_theta(t_end, .; -T)`` with its optional time history"""
    theta: float
    T: float
    drift_mode: str
    T_warm: float
    field: DensityField
    times: FloatArray
    history: FloatArray | None = None

    def at(self, t: float) -> DensityField:
        if self.history is None:
            raise DomainError("history was not recorded")
        index = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        return DensityField(self.field.grid, float(self.times[index]), self.history[index])


def drift_path(
    noise: NoiseRealization,
    theta: float,
    T: float,
    drift_mode: str,
    *,
    t_end: float = 0.0,
    T_warm: float = DEFAULT_T_WARM,
) -> BurgersPath:
    """Drift for the Fokker-Planck equation on ``[-T, t_end]``.

    ``"running"`` uses ``u_theta(., .; -T)``; ``"global"`` uses the warm-started proxy
    ``u_theta(., .; -T - T_warm)`` for the stationary solution.
    """
    if drift_mode == "running":
        return burgers_trajectory(noise, theta, T, t_end)
    if drift_mode == "global":
        return burgers_trajectory(noise, theta, T + T_warm, t_end).window(-T, t_end)
    raise ValueError(f"Unknown drift mode: {drift_mode}")


def solve_g(
    noise: NoiseRealization,
    theta: float,
    T: float,
    g_ic: DensityField | None = None,
    drift_mode: str = "running",
    *,
    t_end: float = 0.0,
    T_warm: float = DEFAULT_T_WARM,
    record: bool = False,
    path: BurgersPath | None = None,
) -> GSolution:
    """Solve ``dg/dt = 0.5 g'' + (u g)'`` from ``g(-T) = g_ic`` up to ``t_end``.

    Args:
        noise: Forcing realization covering the drift window
        theta: Burgers mean
        T: Horizon; the density starts at ``-T``
        g_ic: Initial density, uniform by default
        drift_mode: ``"running"`` or ``"global"``
        t_end: Final time
        T_warm: Warm-up length of the global proxy
        record: Keep every intermediate density
        path: Precomputed drift covering ``[-T, t_end]``

    Returns:
        The solution with its history when requested
    """
    if path is None:
        path = drift_path(noise, theta, T, drift_mode, t_end=t_end, T_warm=T_warm)
    grid = noise.grid
    if g_ic is None:
        g_ic = DensityField.uniform(grid, -T)
    first, last = path.index_of(-T), path.index_of(t_end)
    values, history = evolve_density(np.array(g_ic.values), path, first, last, record=record)
    logger.debug(f"solve_g theta={theta} T={T} mode={drift_mode} min={np.min(values):.3e}")
    return GSolution(
        theta=theta,
        T=T,
        drift_mode=drift_mode,
        T_warm=T_warm if drift_mode == "global" else 0.0,
        field=DensityField(grid, t_end, values),
        times=path.times[first:last + 1],
        history=history,
    )


def derivative_identity_errors(
    noise: NoiseRealization, theta: float, eps_list: Sequence[float], T: float
) -> dict[float, float]:
    """``sup_x |(u_{theta+eps} - u_theta) / eps - g_theta|`` at time 0 for each ``eps``."""
    g = solve_g(noise, theta, T).field.values
    base = burgers_from_flat(noise, theta, T, 0.0).field.values
    errors = {}
    for eps in eps_list:
        shifted = burgers_from_flat(noise, theta + eps, T, 0.0).field.values
        errors[eps] = float(np.max(np.abs((shifted - base) / eps - g)))
    return errors


def derivative_identity_error(noise: NoiseRealization, theta: float, eps: float, T: float) -> float:
    """Sup-norm gap between the difference quotient of ``u`` in ``theta`` and ``g_theta``."""
    return derivative_identity_errors(noise, theta, [eps], T)[eps]


def l1_forgetting(
    noise: NoiseRealization,
    theta: float,
    horizons: Sequence[float],
    g_ic: DensityField,
    drift_mode: str = "running",
) -> dict[float, float]:
    """L1 distance at time 0 between runs from the uniform density and from ``g_ic``."""
    distances = {}
    for T in horizons:
        path = drift_path(noise, theta, T, drift_mode)
        start = DensityField(g_ic.grid, -T, g_ic.values)
        uniform = solve_g(noise, theta, T, path=path).field.values
        other = solve_g(noise, theta, T, start, path=path).field.values
        distances[T] = float(np.sum(np.abs(uniform - other)) * noise.grid.dx)
    return distances


# ============================================================================
# Potential
# ============================================================================

@dataclass(frozen=True, eq=False)
class PotentialField:
    """Periodic potential ``phi`` with ``g = 1 + phi'``"""
    field: ScalarField

    @property
    def density_values(self) -> FloatArray:
        return 1.0 + spectral.derivative(self.field.values, dealias=False)

    def is_admissible(self, tolerance: float = 0.0) -> bool:
        """``phi' >= -1`` pointwise, i.e. the induced density is nonnegative."""
        return bool(np.min(self.density_values) >= -tolerance)


def potential_from_density(g: ScalarField) -> PotentialField:
    """Zero-mean periodic antiderivative of ``g - 1``."""
    values = spectral.antiderivative(g.values - np.mean(g.values), g.grid.x)
    values = values - np.mean(values)
    return PotentialField(ScalarField(g.grid, g.time, values))


def density_from_potential(phi: PotentialField) -> ScalarField:
    return ScalarField(phi.field.grid, phi.field.time, phi.density_values)


def potential_field(noise: NoiseRealization, theta: float, T: float) -> PotentialField:
    """``phi_theta(0, x; -T)``: mean polymer endpoint displacement ``theta T + psi_theta``."""
    z, m = first_moment_field(noise, -T, 0.0, tilt=theta)
    return PotentialField(ScalarField(noise.grid, 0.0, theta * T + m.values / z.values))


# ============================================================================
# Explicit limit formula
# ============================================================================

@dataclass(frozen=True, eq=False)
class ExplicitG:
    """Quadrature value of the explicit representation of ``g~_theta(0, .)``"""
    field: ScalarField
    nodes: FloatArray
    tail_estimate: float
    s_max: float
    T_proxy: float

    @property
    def tail_warning(self) -> bool:
        return bool(self.tail_estimate > TAIL_WARNING)

    @property
    def mass(self) -> float:
        return self.field.mass


def quadrature_nodes(s_max: float, dt: float, ratio: float = 0.8, s_min: float = 1e-3) -> FloatArray:
    """Geometric nodes ``s_max * ratio^k`` down to ``s_min``, snapped to the time grid."""
    nodes = set()
    s = s_max
    while s >= s_min - 1e-15:
        nodes.add(max(1, round(s / dt)))
        s *= ratio
    return np.array(sorted(nodes), dtype=np.float64) * dt


def _midpoint_integrand(
    rows: FloatArray, flat: FloatArray, theta: float, dx: float
) -> FloatArray:
    """``int U(-s, y) d_x rho(0, x; s, y) dy`` in the sheared variable ``y' = y - theta s``."""
    drift = theta + spectral.log_derivative(flat)
    weighted = rows * flat[None, :]
    density = weighted / (weighted.sum(axis=1, keepdims=True) * dx)
    # Differentiating the normalized density keeps int_x d_x rho = 0 exactly
    density_dx = spectral.derivative(density, axis=0, dealias=False)
    return density_dx @ drift * dx


def tail_bound(nodes: FloatArray, integrand: FloatArray) -> float:
    """
    Bound on the neglected parts of the time integral: ``nodes[0] * max|I(nodes[0])|``
    below the first node plus the integral beyond ``s_max`` of an exponential fitted
    to the last two nodes. Returns ``inf`` when the integrand does not decay there.
    """
    sizes = np.max(np.abs(integrand), axis=1)
    head = float(nodes[0] * sizes[0])
    if sizes[-1] == 0.0:
        return head
    if len(nodes) < 2 or sizes[-2] <= sizes[-1]:
        return float("inf")
    rate = np.log(sizes[-2] / sizes[-1]) / (nodes[-1] - nodes[-2])
    return head + float(sizes[-1] / rate)


def g_explicit(
    noise: NoiseRealization,
    theta: float,
    s_max: float,
    T_proxy: float,
    *,
    ratio: float = 0.8,
    s_min: float = 1e-3,
) -> ExplicitG:
    """``1 + int_0^s_max int U(-s, y) rho(0, x; s, y; -T_proxy) [U(0, x; -s, y) - U(0, x)] dy ds``.

    The product ``rho [U(0, x; -s, y) - U(0, x)]`` is evaluated as ``d_x rho``; the two agree
    and the latter stays finite where Dirac-started solutions underflow at small ``s``.
    """
    if noise.is_white:
        raise DomainError("g_explicit requires smooth noise")
    if s_max > T_proxy:
        raise DomainError(f"s_max={s_max} exceeds the proxy horizon {T_proxy}")
    grid = noise.grid
    sheared = shear_noise(noise, theta)
    nodes = quadrature_nodes(s_max, grid.dt, ratio, s_min)
    propagators = propagator_sweep(sheared, 0.0, [-s for s in nodes])
    flats = evolve_flat(sheared, -T_proxy, [-s for s in nodes])
    integrand = np.array(
        [
            _midpoint_integrand(propagators[-s].entries, flats[-s].values, theta, grid.dx)
            for s in nodes
        ]
    )
    correction = np.trapz(integrand, nodes, axis=0)
    tail = tail_bound(nodes, integrand)
    if tail > TAIL_WARNING:
        logger.warning(f"g_explicit quadrature tail estimate {tail:.3f} exceeds {TAIL_WARNING}")
    return ExplicitG(
        field=ScalarField(grid, 0.0, 1.0 + correction),
        nodes=nodes,
        tail_estimate=float(tail),
        s_max=s_max,
        T_proxy=T_proxy,
    )


def l1_distance(first: ScalarField, second: ScalarField) -> float:
    return float(np.sum(np.abs(first.values - second.values)) * first.grid.dx)


def grid_for(n_space: int, T: float, dt: float, t_end: float = 0.0) -> TorusGrid:
    """Grid covering ``[-T, t_end]``."""
    return TorusGrid(n_space, -T, t_end, dt)
