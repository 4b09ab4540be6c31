"""Hopf-Cole Burgers solutions, Busemann functions and the one-force-one-solution gap"""
from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import spectral
from .models import ConservationError, DomainError, PositivityLostError, ScalarField, TorusGrid
from .she_engine import SHEStepper, evolve, propagator
from .torus_noise import NoiseRealization, shear_noise

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

MEAN_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class BurgersSolution:
    """``u_theta(t, .; -T)`` started from the constant ``theta`` at time ``T_start``"""
    theta: float
    T_start: float
    field: ScalarField

    @property
    def time(self) -> float:
        return self.field.time


@dataclass(frozen=True, eq=False)
class DiracBurgersSolution:
    """``U_theta(0, .; -s, y)``: Burgers solution whose Hopf-Cole data is a Dirac mass"""
    theta: float
    s: float
    y: float
    field: ScalarField
    rounding_error: float = 0.0


@dataclass(frozen=True, eq=False)
class BurgersPath:
    """Time-indexed Burgers field on a grid window.

    ``u_pre[j]`` is the field at ``times[j]`` before that step's noise kick and
    ``u_post[j]`` the field right after it; between kicks the field evolves
    deterministically from ``u_post[j]`` to ``u_pre[j + 1]``.
    """
    theta: float
    T_start: float
    grid: TorusGrid
    times: FloatArray
    u_pre: FloatArray
    u_post: FloatArray

    @property
    def n_steps(self) -> int:
        return self.u_post.shape[0]

    @property
    def dt(self) -> float:
        return self.grid.dt

    def index_of(self, t: float) -> int:
        position = (t - self.times[0]) / self.grid.dt
        index = round(position)
        if abs(position - index) > 1e-9 * max(1.0, abs(position)) or not 0 <= index <= self.n_steps:
            raise DomainError(f"time {t} not covered by Burgers path [{self.times[0]}, {self.times[-1]}]")
        return index

    def field_at(self, t: float) -> ScalarField:
        return ScalarField(self.grid, t, self.u_pre[self.index_of(t)])

    def window(self, t_start: float, t_end: float) -> BurgersPath:
        """Restrict to ``[t_start, t_end]`` (the origin ``T_start`` is kept)."""
        first, last = self.index_of(t_start), self.index_of(t_end)
        return BurgersPath(
            theta=self.theta,
            T_start=self.T_start,
            grid=self.grid,
            times=self.times[first:last + 1],
            u_pre=self.u_pre[first:last + 1],
            u_post=self.u_post[first:last],
        )


def _flat_setup(
    noise: NoiseRealization, theta: float
) -> tuple[NoiseRealization, SHEStepper, Callable[[FloatArray, float], FloatArray]]:
    """Evolution noise, stepper and the map from the evolved field to ``u``.

    Smooth noise uses the sheared field ``V`` with ``u(t, x) = theta + (log V)'(t, x + theta t)``;
    white noise uses the tilted field ``w = exp(-theta x) Z`` with ``u = theta + (log w)'``.
    """
    if noise.is_white:
        stepper = SHEStepper.for_noise(noise, tilt=theta)

        def to_u(values: FloatArray, t: float) -> FloatArray:
            return theta + spectral.log_derivative(values)

        return noise, stepper, to_u

    sheared = shear_noise(noise, theta)
    stepper = SHEStepper.for_noise(sheared)

    def to_u(values: FloatArray, t: float) -> FloatArray:
        return theta + spectral.shifted_log_derivative(values, theta * t)

    return sheared, stepper, to_u


def _check_mean(u: FloatArray, theta: float, t: float) -> None:
    drift = abs(float(np.mean(u)) - theta)
    if drift > MEAN_TOLERANCE:
        raise ConservationError(f"mean of u drifted by {drift:.3e} at t={t:.6g}")


def burgers_from_flat(noise: NoiseRealization, theta: float, T: float, t: float) -> BurgersSolution:
    """``u_theta(t, .; -T)`` through the Hopf-Cole transform of the flat SHE solution.

    Args:
        noise: Forcing realization covering ``[-T, t]``
        theta: Mean of the constant initial data
        T: Horizon; the solution starts at time ``-T``
        t: Evaluation time, ``t >= -T``

    Returns:
        The solution at time ``t``
    """
    if t < -T:
        raise DomainError(f"evaluation time {t} precedes the start time {-T}")
    evolving, stepper, to_u = _flat_setup(noise, theta)
    grid = noise.grid
    first, last = grid.index_of(-T), grid.index_of(t)
    values = np.ones(grid.n_space)
    for step, increment in evolving.iter_increments(first, last):
        values = stepper.step(values, increment)
        if np.min(values) <= 0:
            raise PositivityLostError(f"positivity lost at t={grid.time_at(step + 1):.6g}; refine dt")
        values /= np.mean(values)
    u = to_u(values, t)
    _check_mean(u, theta, t)
    return BurgersSolution(theta=theta, T_start=-T, field=ScalarField(grid, t, u))


def burgers_trajectory(
    noise: NoiseRealization, theta: float, T: float, t_end: float = 0.0
) -> BurgersPath:
    """Record ``u_theta(t, .; -T)`` on every grid time of ``[-T, t_end]``.

    The mean is asserted equal to ``theta`` after every half step.
    """
    evolving, stepper, to_u = _flat_setup(noise, theta)
    grid = noise.grid
    first, last = grid.index_of(-T), grid.index_of(t_end)
    n_steps = last - first
    u_pre = np.empty((n_steps + 1, grid.n_space))
    u_post = np.empty((n_steps, grid.n_space))
    values = np.ones(grid.n_space)
    u_pre[0] = theta
    for step, increment in evolving.iter_increments(first, last):
        local = step - first
        t_left, t_right = grid.time_at(step), grid.time_at(step + 1)
        values = stepper.kick(values, increment)
        if np.min(values) <= 0:
            raise PositivityLostError(f"positivity lost at t={t_left:.6g}; refine dt")
        u_post[local] = to_u(values, t_left)
        _check_mean(u_post[local], theta, t_left)
        values = stepper.flow(values)
        values /= np.mean(values)
        u_pre[local + 1] = to_u(values, t_right)
        _check_mean(u_pre[local + 1], theta, t_right)
    logger.debug(f"Burgers path theta={theta} on [{-T}, {t_end}] with {n_steps} steps")
    return BurgersPath(
        theta=theta,
        T_start=-T,
        grid=grid,
        times=grid.times[first:last + 1],
        u_pre=u_pre,
        u_post=u_post,
    )


def shear_target(grid: TorusGrid, y: float, theta: float, s: float) -> tuple[int, float]:
    """Grid index of ``y - theta s`` and the distance rounded away."""
    position = (y - theta * s) * grid.n_space
    index = round(position)
    rounding = abs(position - index) * grid.dx
    if rounding > 1e-12:
        logger.warning(f"shear offset y - theta*s = {y - theta * s:.6g} rounded by {rounding:.3e}")
    return index % grid.n_space, rounding


def dirac_log_derivative(entries: FloatArray, theta: float) -> FloatArray:
    """``theta + d_x log G(x, y)`` for every column of a propagator matrix."""
    if np.min(entries) <= 0:
        raise PositivityLostError("Dirac-started solution underflowed; increase s or n_space")
    return theta + spectral.log_derivative(entries, axis=0)


def burgers_from_dirac(noise: NoiseRealization, theta: float, s: float, y: float) -> DiracBurgersSolution:
    """``U_theta(0, x; -s, y) = theta + d_x log G^theta_{0,-s}(x, y - theta s)``.

    Raises:
        DomainError: If ``s <= 0``
    """
    if s <= 0:
        raise DomainError("Dirac data is not representable at s = 0")
    grid = noise.grid
    grid.space_index_of(y)
    index, rounding = shear_target(grid, y, theta, s)
    sheared = noise if theta == 0.0 else shear_noise(noise, theta)
    dirac = np.zeros(grid.n_space)
    dirac[index] = 1.0 / grid.dx

    column = evolve(sheared, dirac, -s, 0.0)[0.0]
    u = dirac_log_derivative(column, theta)
    return DiracBurgersSolution(
        theta=theta, s=s, y=y, field=ScalarField(grid, 0.0, u), rounding_error=rounding
    )


def dirac_field_matrix(noise: NoiseRealization, theta: float, s: float) -> FloatArray:
    """All Dirac solutions at once: column ``j`` is ``U_theta(0, .; -s, y)`` with ``y - theta s = y_j``."""
    sheared = noise if theta == 0.0 else shear_noise(noise, theta)
    return dirac_log_derivative(propagator(sheared, -s, 0.0).entries, theta)


def busemann(sol: BurgersSolution, x: float | FloatArray) -> float | FloatArray:
    """``int_0^x u(t, y) dy`` by spectral antiderivative."""
    value = spectral.antiderivative(sol.field.values, x)
    return float(value) if np.ndim(value) == 0 else value


def ofos_gap(noise: NoiseRealization, theta: float, T1: float, T2: float, eval_t: float = 0.0) -> float:
    """``sup_x |u(eval_t, x; -T1) - u(eval_t, x; -T2)|`` under common noise."""
    if not eval_t >= -T1 >= -T2:
        raise DomainError(f"ofos_gap requires eval_t >= -T1 >= -T2 (got {eval_t}, {T1}, {T2})")
    if T1 == T2:
        return 0.0
    first = burgers_from_flat(noise, theta, T1, eval_t)
    second = burgers_from_flat(noise, theta, T2, eval_t)
    return float(np.max(np.abs(first.field.values - second.field.values)))


def fourth_moment_profile(
    noises: Sequence[NoiseRealization], theta: float, horizons: Sequence[float]
) -> dict[float, tuple[float, float]]:
    """Ensemble ``E|u_theta(0, 0; -T)|^4`` with its standard error for each horizon."""
    profile: dict[float, tuple[float, float]] = {}
    for T in horizons:
        values = np.array(
            [burgers_from_flat(noise, theta, T, 0.0).field.values[0] ** 4 for noise in noises]
        )
        profile[T] = (float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values))))
    return profile
