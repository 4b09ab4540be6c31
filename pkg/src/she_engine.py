"""Multiplicative stochastic heat equation on the torus: stepping, propagators, companion fields"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from . import spectral
from .models import (
    DomainError,
    GridError,
    PositivityLostError,
    PropagatorMatrix,
    ScalarField,
)
from .torus_noise import NoiseRealization

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

# Roundoff-level negative entries tolerated in Dirac-started matrices, relative to the maximum
MATRIX_ROUNDOFF = 1e-12


class SHEStepper:
    """One Ito step ``Z <- S_dt [(1 + W) Z]`` for fields of shape ``(n,)`` or ``(n, m)``.

    ``S_dt`` is the exact spectral semigroup of ``0.5 d_xx + tilt d_x`` in ``"spectral"``
    mode and Crank-Nicolson on the second-difference Laplacian in ``"lattice"`` mode.
    """

    def __init__(self, n_space: int, dt: float, mode: str = "spectral", tilt: float = 0.0):
        if mode not in ("spectral", "lattice"):
            raise ValueError(f"Unknown stepping mode: {mode}")
        self.n_space = n_space
        self.dt = dt
        self.mode = mode
        self.tilt = tilt
        if mode == "spectral":
            self.multiplier = spectral.heat_multiplier(n_space, dt, tilt)
            self.tilt_derivative = spectral.heat_tilt_derivative(n_space, dt, tilt)
        else:
            self.multiplier = spectral.crank_nicolson_multiplier(n_space, dt, tilt)
            self.tilt_derivative = spectral.crank_nicolson_tilt_derivative(n_space, dt, tilt)

    @classmethod
    def for_noise(cls, noise: NoiseRealization, tilt: float = 0.0) -> SHEStepper:
        return cls(noise.grid.n_space, noise.grid.dt, noise.mode, tilt)

    @staticmethod
    def kick(values: FloatArray, increment: FloatArray) -> FloatArray:
        if values.ndim == 2 and increment.ndim == 1:
            increment = increment[:, None]
        return values * (1.0 + increment)

    def flow(self, values: FloatArray, axis: int = 0) -> FloatArray:
        return spectral.apply_multiplier(values, self.multiplier, axis)

    def step(self, values: FloatArray, increment: FloatArray) -> FloatArray:
        return self.flow(self.kick(values, increment))

    def adjoint_step(self, values: FloatArray, increment: FloatArray) -> FloatArray:
        """Right-multiplication of row vectors by one step: heat along rows, then the kick."""
        flowed = self.flow(values, axis=values.ndim - 1)
        return flowed * (1.0 + increment)

    def step_with_moment(
        self, z: FloatArray, m: FloatArray, increment: FloatArray
    ) -> tuple[FloatArray, FloatArray]:
        """Advance ``Z`` and its exact tilt-derivative companion ``M`` jointly."""
        kicked_z = self.kick(z, increment)
        kicked_m = self.kick(m, increment)
        z_hat = np.fft.rfft(kicked_z, axis=0)
        m_hat = np.fft.rfft(kicked_m, axis=0)
        shape = (-1,) + (1,) * (z.ndim - 1)
        multiplier = self.multiplier.reshape(shape)
        source = self.tilt_derivative.reshape(shape)
        new_z = np.fft.irfft(multiplier * z_hat, n=self.n_space, axis=0)
        new_m = np.fft.irfft(multiplier * m_hat + source * z_hat, n=self.n_space, axis=0)
        return new_z, new_m


def _check_positive(values: FloatArray, time: float) -> None:
    if np.min(values) <= 0:
        raise PositivityLostError(f"positivity lost at t={time:.6g}; refine dt")


def _check_matrix(values: FloatArray, time: float) -> None:
    if np.min(values) < -MATRIX_ROUNDOFF * np.max(values):
        raise PositivityLostError(f"propagator lost positivity at t={time:.6g}; refine dt")


def she_step(
    state: ScalarField,
    noise_increment: FloatArray,
    dt: float,
    *,
    mode: str = "spectral",
    tilt: float = 0.0,
) -> ScalarField:
    """Advance a positive SHE state by one step.

    Args:
        state: Current positive profile
        noise_increment: ``W_j`` on the same grid
        dt: Step size, must match the grid
        mode: ``"spectral"`` (smooth noise) or ``"lattice"`` (white noise)
        tilt: Drift of the tilted semigroup, 0 for the plain heat flow

    Returns:
        The state at ``state.time + dt``

    Raises:
        PositivityLostError: If the new state has a nonpositive entry
    """
    if abs(dt - state.grid.dt) > 1e-12 * state.grid.dt:
        raise GridError(f"dt={dt} does not match grid dt={state.grid.dt}")
    _check_positive(state.values, state.time)
    stepper = SHEStepper(state.grid.n_space, dt, mode, tilt)
    values = stepper.step(state.values, np.asarray(noise_increment, dtype=np.float64))
    time = state.time + dt
    _check_positive(values, time)
    return ScalarField(state.grid, time, values)


def _window(noise: NoiseRealization, s: float, t: float) -> tuple[int, int]:
    if s > t:
        raise DomainError(f"evolution requires s <= t (s={s}, t={t})")
    return noise.grid.index_of(s), noise.grid.index_of(t)


def evolve(
    noise: NoiseRealization,
    initial: FloatArray,
    s: float,
    t: float,
    *,
    tilt: float = 0.0,
    checkpoints: Iterable[float] = (),
) -> dict[float, FloatArray]:
    """Evolve a profile (or a matrix of columns) from ``s`` to ``t``.

    Returns:
        Mapping from each requested checkpoint time (and ``t``) to the state there
    """
    first, last = _window(noise, s, t)
    wanted = {noise.grid.index_of(c): c for c in checkpoints}
    wanted[last] = t
    stepper = SHEStepper.for_noise(noise, tilt)
    values = np.array(initial, dtype=np.float64)
    # Dirac-started states carry roundoff-level negatives far from the source
    tolerant = values.ndim == 2 or np.min(values) <= 0
    results: dict[float, FloatArray] = {}
    if first in wanted:
        results[wanted[first]] = values.copy()
    for step, increment in noise.iter_increments(first, last):
        values = stepper.step(values, increment)
        time = noise.grid.time_at(step + 1)
        if tolerant:
            _check_matrix(values, time)
        else:
            _check_positive(values, time)
        if step + 1 in wanted:
            results[wanted[step + 1]] = values.copy()
    return results


def evolve_flat(
    noise: NoiseRealization,
    s: float,
    times: Sequence[float],
    *,
    tilt: float = 0.0,
) -> dict[float, ScalarField]:
    """``int G_{t,s}(x, y) dy`` at each requested ``t``: the constant-1 field started at ``s``."""
    times = list(times)
    end = max(times)
    states = evolve(noise, np.ones(noise.grid.n_space), s, end, tilt=tilt, checkpoints=times)
    return {time: ScalarField(noise.grid, time, states[time]) for time in times}


def propagator(noise: NoiseRealization, s: float, t: float) -> PropagatorMatrix:
    """Discrete propagator ``G_{t,s}(x, y)`` by matrix-valued stepping.

    Raises:
        GridError: If ``s`` or ``t`` is off the grid
    """
    n = noise.grid.n_space
    dirac = np.eye(n) / noise.grid.dx
    entries = evolve(noise, dirac, s, t)[t]
    logger.debug(f"Propagator [{s}, {t}] computed on n_space={n}")
    return PropagatorMatrix(noise.grid, s, t, entries)


def propagator_sweep(
    noise: NoiseRealization, t: float, s_values: Sequence[float]
) -> dict[float, PropagatorMatrix]:
    """``G_{t,s}`` for several ``s <= t`` from a single backward (adjoint) sweep.

    Rows are evolved backward in time: ``G_{t,s-dt} = G_{t,s} A_{s-dt}`` where ``A`` is
    one forward step.
    """
    grid = noise.grid
    last = grid.index_of(t)
    wanted = {grid.index_of(s): s for s in s_values}
    if any(index > last for index in wanted):
        raise DomainError("propagator_sweep requires every s <= t")
    first = min(wanted)
    stepper = SHEStepper.for_noise(noise)
    rows = np.eye(grid.n_space) / grid.dx
    results: dict[float, PropagatorMatrix] = {}
    if last in wanted:
        results[wanted[last]] = PropagatorMatrix(grid, wanted[last], t, rows)
    for step in range(last - 1, first - 1, -1):
        rows = stepper.adjoint_step(rows, noise.increment(step))
        _check_matrix(rows, grid.time_at(step))
        if step in wanted:
            results[wanted[step]] = PropagatorMatrix(grid, wanted[step], t, rows)
    return results


def propagator_rows(
    noise: NoiseRealization, x_indices: Sequence[int], s: float, t: float
) -> FloatArray:
    """Rows ``G_{t,s}(x_i, .)`` for the given start cells, shape ``(len(x_indices), n)``."""
    n = noise.grid.n_space
    rows = np.zeros((len(x_indices), n))
    rows[np.arange(len(x_indices)), list(x_indices)] = 1.0 / noise.grid.dx
    return adjoint_evolve(noise, rows, s, t)


def adjoint_evolve(noise: NoiseRealization, rows: FloatArray, s: float, t: float) -> FloatArray:
    """Row vectors ``r`` mapped to ``r G_{t,s}`` (integration against the kernel in ``x``)."""
    first, last = _window(noise, s, t)
    stepper = SHEStepper.for_noise(noise)
    rows = np.array(rows, dtype=np.float64)
    for step in range(last - 1, first - 1, -1):
        rows = stepper.adjoint_step(rows, noise.increment(step))
    _check_matrix(rows, s)
    return rows


def first_moment_field(
    noise: NoiseRealization,
    s: float,
    t: float,
    *,
    tilt: float = 0.0,
    initial: FloatArray | None = None,
) -> tuple[ScalarField, ScalarField]:
    """Evolve ``Z`` and the winding companion ``M`` from ``s`` to ``t``.

    With ``tilt = theta`` the pair describes data ``exp(theta y)``: ``Z = exp(-theta x) Z_theta``
    (growth ``exp(theta^2 t / 2)`` removed) and ``M = dZ/dtheta``, so that ``M / Z`` is the
    quenched mean endpoint displacement minus ``theta (t - s)``. For ``tilt = 0`` this is
    ``M(t, x) = int Z_{t,s}(x, y) (y - x) dy``, which solves
    ``dM = 0.5 M'' + xi M + Z'``.

    Args:
        noise: Smooth or white realization
        s: Start time
        t: End time
        tilt: Exponential tilt of the initial data
        initial: Initial ``Z`` profile, constant 1 by default; ``M`` always starts at 0

    Returns:
        ``(Z, M)`` at time ``t``
    """
    first, last = _window(noise, s, t)
    n = noise.grid.n_space
    z = np.ones(n) if initial is None else np.array(initial, dtype=np.float64)
    _check_positive(z, s)
    m = np.zeros(n)
    stepper = SHEStepper.for_noise(noise, tilt)
    for step, increment in noise.iter_increments(first, last):
        z, m = stepper.step_with_moment(z, m, increment)
        _check_positive(z, noise.grid.time_at(step + 1))
    return ScalarField(noise.grid, t, z), ScalarField(noise.grid, t, m)


def first_moment_batch(
    noises: Sequence[NoiseRealization],
    s: float,
    t: float,
    *,
    tilt: float = 0.0,
    chunk: int = 256,
) -> tuple[FloatArray, FloatArray]:
    """:func:`first_moment_field` for many realizations on a common grid.

    Returns:
        ``(Z, M)`` arrays of shape ``(n_space, len(noises))``
    """
    grid = noises[0].grid
    if any(noise.grid != grid or noise.spec != noises[0].spec for noise in noises):
        raise GridError("batched realizations must share grid and covariance")
    first, last = _window(noises[0], s, t)
    z = np.ones((grid.n_space, len(noises)))
    m = np.zeros_like(z)
    stepper = SHEStepper.for_noise(noises[0], tilt)
    for start in range(first, last, chunk):
        count = min(chunk, last - start)
        blocks = np.stack([noise.increment_block(start, count) for noise in noises], axis=2)
        for offset in range(count):
            z, m = stepper.step_with_moment(z, m, blocks[offset])
            _check_positive(z, grid.time_at(start + offset + 1))
    return z, m
