"""Domain types and exceptions for the stochastic Burgers laboratory"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]

# Relative tolerance when converting absolute times to step indices
TIME_TOLERANCE = 1e-9


def _frozen(values: Any) -> FloatArray:
    """Return a read-only float64 copy of ``values``."""
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TorusGrid:
    """Uniform discretization of a time window times the unit torus.

    Step ``j`` covers ``[t_j, t_j + dt]`` with ``t_j = t_start + j * dt``.
    """

    n_space: int
    t_start: float
    t_end: float
    dt: float
    n_steps: int = field(init=False)

    def __post_init__(self) -> None:
        if self.n_space < 8 or self.n_space % 2:
            raise GridError(f"n_space must be even and >= 8, got {self.n_space}")
        if not self.t_start < self.t_end:
            raise GridError(f"t_start must precede t_end ({self.t_start} >= {self.t_end})")
        if self.dt <= 0:
            raise GridError(f"dt must be positive, got {self.dt}")

        span = self.t_end - self.t_start
        n_steps = round(span / self.dt)
        if n_steps < 1 or abs(n_steps * self.dt - span) > 1e-12 * max(abs(span), 1.0) * n_steps:
            raise GridError(f"dt={self.dt} does not divide the window [{self.t_start}, {self.t_end}]")
        object.__setattr__(self, "n_steps", n_steps)

    @property
    def dx(self) -> float:
        return 1.0 / self.n_space

    @property
    def x(self) -> FloatArray:
        """Cell centres ``x_i = i * dx``."""
        return np.arange(self.n_space) * self.dx

    @property
    def times(self) -> FloatArray:
        return self.t_start + np.arange(self.n_steps + 1) * self.dt

    def time_at(self, index: int) -> float:
        return self.t_start + index * self.dt

    def index_of(self, t: float) -> int:
        """Convert an absolute time to its step index.

        Raises:
            GridError: If ``t`` is outside the window or not a grid time
        """
        position = (t - self.t_start) / self.dt
        index = round(position)
        if abs(position - index) > TIME_TOLERANCE * max(1.0, abs(position)):
            raise GridError(f"time {t} is not on the grid (dt={self.dt}, t_start={self.t_start})")
        if index < 0 or index > self.n_steps:
            raise GridError(f"time {t} outside grid window [{self.t_start}, {self.t_end}]")
        return index

    def space_index_of(self, x: float) -> int:
        """Convert a torus point to its cell index, requiring an exact grid point."""
        position = (x % 1.0) * self.n_space
        index = round(position)
        if abs(position - index) > TIME_TOLERANCE * self.n_space:
            raise GridError(f"point {x} is not a grid point (n_space={self.n_space})")
        return index % self.n_space

    def with_window(self, t_start: float, t_end: float) -> TorusGrid:
        return TorusGrid(self.n_space, t_start, t_end, self.dt)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_space": self.n_space,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "dt": self.dt,
            "n_steps": self.n_steps,
        }


@dataclass(frozen=True)
class CovarianceSpec:
    """Spatial covariance ``R(x) = l_0 + sum_k l_k cos(2 pi k x)`` or space-time white noise."""

    mode_weights: tuple[float, ...] = (0.0, 0.5, 0.25)
    is_white: bool = False
    white_amplitude: float = 1.0

    def __post_init__(self) -> None:
        weights = tuple(float(w) for w in self.mode_weights)
        object.__setattr__(self, "mode_weights", weights)
        if not self.is_white:
            if not weights:
                raise CovarianceError("mode_weights must not be empty")
            if any(w < 0 or not math.isfinite(w) for w in weights):
                raise CovarianceError(f"mode weights must be finite and nonnegative: {weights}")
        if self.white_amplitude < 0:
            raise CovarianceError("white_amplitude must be nonnegative")

    @property
    def n_modes(self) -> int:
        """Highest Fourier mode K."""
        return len(self.mode_weights) - 1

    @property
    def variance(self) -> float:
        """R(0), the one-point variance rate."""
        return float(sum(self.mode_weights))

    @property
    def is_zero(self) -> bool:
        if self.is_white:
            return self.white_amplitude == 0.0
        return all(w == 0.0 for w in self.mode_weights)

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda": list(self.mode_weights),
            "white": self.is_white,
            "white_amplitude": self.white_amplitude,
        }


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One spatial profile at a fixed time."""

    grid: TorusGrid
    time: float
    values: FloatArray

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        if values.shape != (self.grid.n_space,):
            raise GridError(
                f"field has shape {values.shape}, expected ({self.grid.n_space},)"
            )
        object.__setattr__(self, "values", values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def mass(self) -> float:
        """Grid integral over the torus."""
        return float(np.sum(self.values) * self.grid.dx)

    def to_dict(self) -> dict[str, Any]:
        return {"time": self.time, "values": self.values.tolist()}


# Mass tolerance for density fields
MASS_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class DensityField(ScalarField):
    """Nonnegative profile with unit mass."""

    def __post_init__(self) -> None:
        super().__post_init__()
        if np.min(self.values) < 0:
            raise PositivityLostError(
                f"density negative at t={self.time} (min={np.min(self.values):.3e})"
            )
        if abs(self.mass - 1.0) > MASS_TOLERANCE:
            raise ConservationError(f"density mass {self.mass!r} deviates from 1 at t={self.time}")

    @classmethod
    def uniform(cls, grid: TorusGrid, time: float) -> DensityField:
        return cls(grid, time, np.ones(grid.n_space))

    @classmethod
    def normalized(cls, grid: TorusGrid, time: float, values: Any) -> DensityField:
        """Build a density from an arbitrary nonnegative profile by rescaling."""
        values = np.asarray(values, dtype=np.float64)
        mass = np.sum(values) * grid.dx
        if mass <= 0:
            raise PositivityLostError("cannot normalize a profile with nonpositive mass")
        return cls(grid, time, values / mass)


@dataclass(frozen=True, eq=False)
class PropagatorMatrix:
    """Discrete kernel ``G_{t,s}(x, y)``; column ``j`` is the evolution of a Dirac at ``y_j``."""

    grid: TorusGrid
    s: float
    t: float
    entries: FloatArray

    def __post_init__(self) -> None:
        if self.s > self.t:
            raise DomainError(f"propagator requires s <= t (s={self.s}, t={self.t})")
        n = self.grid.n_space
        entries = _frozen(self.entries)
        if entries.shape != (n, n):
            raise GridError(f"propagator has shape {entries.shape}, expected ({n}, {n})")
        object.__setattr__(self, "entries", entries)

    def column(self, y_index: int) -> FloatArray:
        return self.entries[:, y_index]

    def row(self, x_index: int) -> FloatArray:
        return self.entries[x_index, :]

    @property
    def column_masses(self) -> FloatArray:
        return self.entries.sum(axis=0) * self.grid.dx


# Exceptions
class BJSError(Exception):
    """Base exception for the laboratory"""


class GridError(BJSError):
    """Invalid grid or a time/point that is not on the grid"""


class CovarianceError(BJSError):
    """Operation not defined for this covariance"""


class DomainError(BJSError):
    """Argument outside the domain of a kernel or density"""


class PositivityLostError(BJSError):
    """A field that must stay positive went nonpositive"""


class ConservationError(BJSError):
    """A conserved quantity (mean or mass) drifted beyond tolerance"""


class StepTooLargeError(BJSError):
    """Time step exceeds the positivity bound of an explicit scheme"""

    def __init__(self, dt: float, admissible: float):
        self.dt = dt
        self.admissible = admissible
        super().__init__(f"dt={dt:.3e} exceeds the positivity bound; admissible dt={admissible:.3e}")


class InsufficientSamplesError(BJSError):
    """Too few samples for a distributional comparison"""

    def __init__(self, n_samples: int, minimum: int):
        self.n_samples = n_samples
        self.minimum = minimum
        super().__init__(f"ensemble has {n_samples} samples; at least {minimum} required")


class ConfigError(BJSError):
    """Invalid experiment configuration"""


class PersistenceError(BJSError):
    """Reading or writing an artifact failed"""

    def __init__(self, path: Any, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")
