"""Closed-form heat kernels on the line and the torus"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .models import DomainError

# Fourier evaluation of the torus kernel from this time on
FOURIER_CROSSOVER = 1.0
_TAIL = 1e-16


@dataclass(frozen=True)
class KernelEval:
    """A kernel value together with its arguments"""
    t: float
    x: float
    value: float


def _check_time(t: float) -> None:
    if not t > 0:
        raise DomainError(f"heat kernels require t > 0, got t={t}")


def wrap_range(t: float) -> int:
    """Number of periodic images kept on each side: ``ceil(6 sqrt t) + 2``."""
    return math.ceil(6.0 * math.sqrt(t)) + 2


def heat_kernel(t: float, x: ArrayLike) -> NDArray[np.float64] | float:
    """Gaussian kernel ``q_t(x) = exp(-x^2 / 2t) / sqrt(2 pi t)``.

    Raises:
        DomainError: If ``t <= 0``
    """
    _check_time(t)
    x = np.asarray(x, dtype=np.float64)
    value = np.exp(-(x**2) / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)
    return float(value) if value.ndim == 0 else value


def heat_kernel_derivative(t: float, x: ArrayLike) -> NDArray[np.float64] | float:
    """``d/dx q_t(x) = -x q_t(x) / t``."""
    _check_time(t)
    x = np.asarray(x, dtype=np.float64)
    value = -x / t * np.exp(-(x**2) / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)
    return float(value) if value.ndim == 0 else value


def _images(t: float, x: NDArray[np.float64], extra: int) -> NDArray[np.float64]:
    n_wrap = wrap_range(t) + extra
    offsets = np.arange(-n_wrap, n_wrap + 1, dtype=np.float64)
    return np.add.outer(np.mod(x, 1.0), offsets)


def _torus_heat_fourier(t: float, x: NDArray[np.float64]) -> NDArray[np.float64]:
    n_modes = 1
    while math.exp(-2.0 * math.pi**2 * n_modes**2 * t) > _TAIL:
        n_modes += 1
    k = np.arange(1, n_modes + 1, dtype=np.float64)
    weights = np.exp(-2.0 * math.pi**2 * k**2 * t)
    return 1.0 + 2.0 * np.cos(2.0 * math.pi * np.multiply.outer(x, k)) @ weights


def torus_heat_kernel(
    t: float, x: ArrayLike, *, method: str = "auto", extra_images: int = 0
) -> NDArray[np.float64] | float:
    """Periodized kernel ``G_t(x) = sum_n q_t(x + n)``.

    Args:
        t: Positive time
        x: Evaluation point(s)
        method: ``"images"``, ``"fourier"`` or ``"auto"`` (Fourier for ``t >= 1``)
        extra_images: Additional periodic images beyond the default wrap range

    Returns:
        Kernel value(s), 1-periodic in ``x``
    """
    _check_time(t)
    x = np.asarray(x, dtype=np.float64)
    if method == "auto":
        method = "fourier" if t >= FOURIER_CROSSOVER else "images"
    if method == "fourier":
        value = _torus_heat_fourier(t, x)
    elif method == "images":
        value = np.sum(heat_kernel(t, _images(t, x, extra_images)), axis=-1)
    else:
        raise ValueError(f"Unknown method: {method}")
    return float(value) if np.ndim(value) == 0 else value


def torus_abs_derivative_kernel(
    t: float, x: ArrayLike, *, extra_images: int = 0
) -> NDArray[np.float64] | float:
    """``Q_t(x) = sum_n |d/dx q_t(x + n)|``.

    Raises:
        DomainError: If ``t <= 0``
    """
    _check_time(t)
    x = np.asarray(x, dtype=np.float64)
    # Images are centred on the representative of x in [-1/2, 1/2) so Q_t(x) = Q_t(-x) holds bitwise
    centred = np.mod(x + 0.5, 1.0) - 0.5
    n_wrap = wrap_range(t) + extra_images
    offsets = np.arange(-n_wrap, n_wrap + 1, dtype=np.float64)
    points = np.add.outer(np.abs(centred), offsets)
    value = np.sum(np.abs(heat_kernel_derivative(t, points)), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def evaluate(kernel: str, t: float, x: float) -> KernelEval:
    """Evaluate a named kernel (``q``, ``G`` or ``Q``) and package the result."""
    functions = {
        "q": heat_kernel,
        "G": torus_heat_kernel,
        "Q": torus_abs_derivative_kernel,
    }
    if kernel not in functions:
        raise ValueError(f"Unknown kernel: {kernel}")
    return KernelEval(t=t, x=x, value=float(functions[kernel](t, x)))
