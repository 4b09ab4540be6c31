"""Fourier helpers for periodic profiles on the unit torus"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
ComplexArray = NDArray[np.complex128]


@lru_cache(maxsize=32)
def wavenumbers(n: int) -> NDArray[np.float64]:
    """Angular wavenumbers ``2 pi k`` for the rfft layout of length ``n``."""
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=1.0 / n)
    k.setflags(write=False)
    return k


@lru_cache(maxsize=32)
def dealias_mask(n: int) -> NDArray[np.float64]:
    """2/3-rule mask: keeps modes with ``k <= n // 3``."""
    k = np.fft.rfftfreq(n, d=1.0 / n)
    mask = (k <= n // 3).astype(np.float64)
    mask.setflags(write=False)
    return mask


def _expand(multiplier: NDArray, ndim: int, axis: int) -> NDArray:
    shape = [1] * ndim
    shape[axis] = multiplier.shape[0]
    return multiplier.reshape(shape)


def apply_multiplier(values: FloatArray, multiplier: NDArray, axis: int = 0) -> FloatArray:
    """Apply a Fourier multiplier along ``axis`` of a real array."""
    n = values.shape[axis]
    coefficients = np.fft.rfft(values, axis=axis)
    coefficients *= _expand(multiplier, values.ndim, axis)
    return np.fft.irfft(coefficients, n=n, axis=axis)


def derivative(values: FloatArray, axis: int = 0, dealias: bool = True) -> FloatArray:
    """Spectral x-derivative; the zero and Nyquist modes are dropped."""
    n = values.shape[axis]
    multiplier = 1j * wavenumbers(n)
    if dealias:
        multiplier = multiplier * dealias_mask(n)
    multiplier[-1] = 0.0
    return apply_multiplier(values, multiplier, axis)


def log_derivative(values: FloatArray, axis: int = 0, dealias: bool = True) -> FloatArray:
    """``d/dx log values`` for a strictly positive periodic profile."""
    return derivative(np.log(values), axis=axis, dealias=dealias)


def shift_multiplier(n: int, shift: float) -> ComplexArray:
    """Multiplier mapping ``f(x)`` to ``f(x + shift)``."""
    k = np.fft.rfftfreq(n, d=1.0 / n)
    phase = np.exp(2j * np.pi * k * shift)
    # Nyquist must stay real
    phase[-1] = np.cos(np.pi * n * shift)
    return phase


def shift(values: FloatArray, amount: float, axis: int = 0) -> FloatArray:
    """Translate a band-limited periodic profile: returns ``f(x + amount)``."""
    if amount == 0.0:
        return np.array(values, dtype=np.float64)
    return apply_multiplier(values, shift_multiplier(values.shape[axis], amount), axis)


def shifted_log_derivative(values: FloatArray, amount: float) -> FloatArray:
    """``(d/dx log values)(x + amount)`` in a single Fourier pass."""
    n = values.shape[0]
    multiplier = 1j * wavenumbers(n) * dealias_mask(n)
    multiplier[-1] = 0.0
    if amount != 0.0:
        multiplier = multiplier * shift_multiplier(n, amount)
    return apply_multiplier(np.log(values), multiplier)


def evaluate(values: FloatArray, points: NDArray | float) -> NDArray[np.float64]:
    """Trigonometric interpolation of a 1-D periodic profile at arbitrary points."""
    n = values.shape[0]
    coefficients = np.fft.rfft(values) / n
    points = np.asarray(points, dtype=np.float64)
    k = np.arange(coefficients.shape[0])
    phases = np.exp(2j * np.pi * np.multiply.outer(points, k[1:-1]))
    result = coefficients[0].real + 2.0 * np.real(phases @ coefficients[1:-1])
    result = result + coefficients[-1].real * np.cos(np.pi * n * points)
    return result


def antiderivative(values: FloatArray, points: NDArray | float) -> NDArray[np.float64]:
    """``int_0^x values(y) dy`` for the trigonometric interpolant, evaluated at ``points``."""
    n = values.shape[0]
    coefficients = np.fft.rfft(values) / n
    points = np.asarray(points, dtype=np.float64)
    k = np.arange(1, coefficients.shape[0] - 1)
    phases = np.exp(2j * np.pi * np.multiply.outer(points, k)) - 1.0
    result = coefficients[0].real * points
    result = result + 2.0 * np.real(phases @ (coefficients[1:-1] / (2j * np.pi * k)))
    result = result + coefficients[-1].real * np.sin(np.pi * n * points) / (np.pi * n)
    return result


def periodic_interp(values: FloatArray, points: NDArray | float) -> NDArray[np.float64]:
    """Piecewise-linear periodic interpolation on the cell centres ``i / n``."""
    n = values.shape[0]
    grid = np.arange(n + 1) / n
    extended = np.append(values, values[0])
    return np.interp(np.mod(points, 1.0), grid, extended)


# ============================================================================
# Heat semigroups
# ============================================================================

@lru_cache(maxsize=64)
def heat_multiplier(n: int, dt: float, tilt: float = 0.0) -> ComplexArray:
    """Exact semigroup of ``0.5 d_xx + tilt d_x`` over ``dt``."""
    k = wavenumbers(n)
    multiplier = np.exp(dt * (-0.5 * k**2 + 1j * tilt * k))
    multiplier.setflags(write=False)
    return multiplier


@lru_cache(maxsize=64)
def heat_tilt_derivative(n: int, dt: float, tilt: float = 0.0) -> ComplexArray:
    """``d/d tilt`` of :func:`heat_multiplier`."""
    k = wavenumbers(n)
    multiplier = 1j * k * dt * heat_multiplier(n, dt, tilt)
    multiplier.setflags(write=False)
    return multiplier


def _lattice_symbols(n: int, tilt: float) -> tuple[ComplexArray, ComplexArray]:
    dx = 1.0 / n
    angle = 2.0 * np.pi * np.fft.rfftfreq(n, d=1.0 / n) / n
    first = 1j * np.sin(angle) / dx
    symbol = 0.5 * (2.0 * np.cos(angle) - 2.0) / dx**2 + tilt * first
    return symbol, first


@lru_cache(maxsize=64)
def crank_nicolson_multiplier(n: int, dt: float, tilt: float = 0.0) -> ComplexArray:
    """Crank-Nicolson step for the second-difference Laplacian plus centred drift."""
    symbol, _ = _lattice_symbols(n, tilt)
    half = 0.5 * dt * symbol
    multiplier = (1.0 + half) / (1.0 - half)
    multiplier.setflags(write=False)
    return multiplier


@lru_cache(maxsize=64)
def crank_nicolson_tilt_derivative(n: int, dt: float, tilt: float = 0.0) -> ComplexArray:
    """``d/d tilt`` of :func:`crank_nicolson_multiplier`."""
    symbol, first = _lattice_symbols(n, tilt)
    half = 0.5 * dt * symbol
    multiplier = dt * first / (1.0 - half) ** 2
    multiplier.setflags(write=False)
    return multiplier
