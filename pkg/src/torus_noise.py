"""Periodic Gaussian forcing: covariance, sampling and the shear transformation"""
from __future__ import annotations

import logging
from collections.abc import Iterator
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

from .models import CovarianceError, CovarianceSpec, GridError, TorusGrid

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

# Steps drawn per generator key; draws for a step depend only on (seed, absolute step index)
BLOCK_STEPS = 512
_BLOCK_OFFSET = 1 << 40
_SMOOTH_STREAM = 1
_WHITE_STREAM = 2


def covariance_eval(spec: CovarianceSpec, x: float | FloatArray) -> float | FloatArray:
    """Evaluate ``R(x) = l_0 + sum_k l_k cos(2 pi k x)``.

    Raises:
        CovarianceError: For white noise, whose covariance is a distribution
    """
    if spec.is_white:
        raise CovarianceError("covariance is distributional")
    x = np.asarray(x, dtype=np.float64)
    k = np.arange(spec.n_modes + 1)
    # cos(2 pi k x) evaluated on the fractional part so that R(x + 1) == R(x) bitwise
    value = np.cos(2.0 * np.pi * np.multiply.outer(np.mod(x, 1.0), k)) @ np.array(spec.mode_weights)
    return float(value) if value.ndim == 0 else value


def _generator(seed: int, block: int, stream: int) -> np.random.Generator:
    sequence = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, block + _BLOCK_OFFSET, stream])
    return np.random.Generator(np.random.Philox(sequence))


@lru_cache(maxsize=256)
def _smooth_block(seed: int, block: int, n_modes: int) -> FloatArray:
    draws = _generator(seed, block, _SMOOTH_STREAM).standard_normal((BLOCK_STEPS, 2, n_modes + 1))
    draws.setflags(write=False)
    return draws


@lru_cache(maxsize=8)
def _white_block(seed: int, block: int, n_space: int) -> FloatArray:
    draws = _generator(seed, block, _WHITE_STREAM).standard_normal((BLOCK_STEPS, n_space))
    draws.setflags(write=False)
    return draws


def _gather(block_fn, seed: int, first: int, count: int, width) -> FloatArray:
    """Concatenate draws for absolute steps ``first .. first + count - 1``."""
    pieces = []
    step = first
    end = first + count
    while step < end:
        block, offset = divmod(step, BLOCK_STEPS)
        take = min(BLOCK_STEPS - offset, end - step)
        pieces.append(block_fn(seed, block, width)[offset:offset + take])
        step += take
    return np.concatenate(pieces, axis=0)


@lru_cache(maxsize=32)
def _fourier_basis(n_space: int, n_modes: int) -> tuple[FloatArray, FloatArray]:
    x = np.arange(n_space) / n_space
    angles = 2.0 * np.pi * np.multiply.outer(x, np.arange(n_modes + 1))
    cos_basis, sin_basis = np.cos(angles), np.sin(angles)
    cos_basis.setflags(write=False)
    sin_basis.setflags(write=False)
    return cos_basis, sin_basis


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """Sampled forcing increments ``W_j(x) = int_{t_j}^{t_j+dt} xi dt`` on a grid.

    Smooth noise stores scaled Fourier coefficients per step; white noise draws
    per-cell Gaussians lazily in blocks. ``shear`` is the accumulated parameter of
    ``xi(t, x) -> xi(t, x - shear * t)``.
    """

    grid: TorusGrid
    spec: CovarianceSpec
    seed: int
    step_offset: int
    coefficients: FloatArray | None = None
    shear: float = 0.0

    @property
    def is_white(self) -> bool:
        return self.spec.is_white

    @property
    def mode(self) -> str:
        """Stepping scheme matching this noise: ``"spectral"`` or ``"lattice"``."""
        return "lattice" if self.spec.is_white else "spectral"

    def _rotated(self, first: int, count: int) -> FloatArray:
        coefficients = self.coefficients[first:first + count]
        if self.shear == 0.0:
            return coefficients
        times = self.grid.time_at(0) + (np.arange(first, first + count)) * self.grid.dt
        phase = 2.0 * np.pi * self.shear * np.multiply.outer(times, np.arange(self.spec.n_modes + 1))
        cos_phase, sin_phase = np.cos(phase), np.sin(phase)
        a, b = coefficients[:, 0, :], coefficients[:, 1, :]
        rotated = np.empty_like(coefficients)
        rotated[:, 0, :] = a * cos_phase - b * sin_phase
        rotated[:, 1, :] = a * sin_phase + b * cos_phase
        return rotated

    def mode_coefficients(self, first: int = 0, count: int | None = None) -> FloatArray:
        """Shear-adjusted coefficients, shape ``(count, 2, K + 1)`` (cosine, sine)."""
        if self.is_white:
            raise CovarianceError("white noise has no finite mode representation")
        if count is None:
            count = self.grid.n_steps - first
        return self._rotated(first, count)

    def increment_block(self, first: int, count: int) -> FloatArray:
        """Increments for steps ``first .. first + count - 1``, shape ``(count, n_space)``."""
        if first < 0 or first + count > self.grid.n_steps:
            raise GridError(f"steps [{first}, {first + count}) outside grid of {self.grid.n_steps} steps")
        n = self.grid.n_space
        if self.is_white:
            if self.spec.white_amplitude == 0.0:
                return np.zeros((count, n))
            scale = self.spec.white_amplitude * np.sqrt(self.grid.dt / self.grid.dx)
            draws = _gather(_white_block, self.seed, self.step_offset + first, count, n)
            return scale * draws
        cos_basis, sin_basis = _fourier_basis(n, self.spec.n_modes)
        coefficients = self._rotated(first, count)
        return coefficients[:, 0, :] @ cos_basis.T + coefficients[:, 1, :] @ sin_basis.T

    def increment(self, step: int) -> FloatArray:
        return self.increment_block(step, 1)[0]

    def iter_increments(self, first: int, last: int, chunk: int = 256) -> Iterator[tuple[int, FloatArray]]:
        """Yield ``(step, W_step)`` for ``first <= step < last`` in order."""
        for start in range(first, last, chunk):
            count = min(chunk, last - start)
            block = self.increment_block(start, count)
            for offset in range(count):
                yield start + offset, block[offset]

    @property
    def increments(self) -> FloatArray:
        """All increments, shape ``(n_steps, n_space)``."""
        return self.increment_block(0, self.grid.n_steps)

    def relabel(self, t_start: float) -> NoiseRealization:
        """Same increments attached to a grid translated in time to start at ``t_start``."""
        span = self.grid.t_end - self.grid.t_start
        grid = TorusGrid(self.grid.n_space, t_start, t_start + span, self.grid.dt)
        return replace(self, grid=grid)


def sample_noise(spec: CovarianceSpec, grid: TorusGrid, seed: int) -> NoiseRealization:
    """Sample a forcing realization; identical arguments give bit-identical increments.

    Args:
        spec: Covariance specification
        grid: Space-time grid (times are absolute; step indices are aligned to multiples of dt)
        seed: Realization seed

    Returns:
        Immutable noise realization
    """
    if not spec.is_white and spec.n_modes > grid.n_space // 4:
        raise GridError(
            f"{spec.n_modes} modes are not resolvable on n_space={grid.n_space} (need K <= n_space/4)"
        )
    step_offset = round(grid.t_start / grid.dt)
    coefficients = None
    if not spec.is_white:
        draws = _gather(_smooth_block, seed, step_offset, grid.n_steps, spec.n_modes)
        scale = np.sqrt(np.array(spec.mode_weights) * grid.dt)
        coefficients = draws * scale
        # The k = 0 mode has no sine partner
        coefficients[:, 1, 0] = 0.0
        coefficients.setflags(write=False)
    logger.debug(f"Sampled noise seed={seed} white={spec.is_white} steps={grid.n_steps}")
    return NoiseRealization(grid=grid, spec=spec, seed=seed, step_offset=step_offset, coefficients=coefficients)


def shear_noise(noise: NoiseRealization, theta: float) -> NoiseRealization:
    """Return the increments of ``xi(t, x - theta t)``.

    Each step's modes are rotated by the phase ``2 pi k theta t_j`` at the step's left
    endpoint ``t_j``.

    Raises:
        CovarianceError: For white noise
    """
    if noise.is_white:
        raise CovarianceError("shear only supported analytically for smooth noise")
    if theta == 0.0:
        return noise
    return replace(noise, shear=noise.shear + theta)


def zero_noise(grid: TorusGrid, *, white: bool = False) -> NoiseRealization:
    """A realization with identically vanishing increments."""
    spec = CovarianceSpec(mode_weights=(0.0,), is_white=white, white_amplitude=0.0)
    return sample_noise(spec, grid, seed=0)
