"""Winding means, Busemann increments and the Brownian-bridge law under white noise"""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from itertools import combinations
from typing import Any

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .models import CovarianceSpec, DomainError, GridError, InsufficientSamplesError, ScalarField, TorusGrid
from .she_engine import evolve_flat, first_moment_batch, first_moment_field, propagator
from .stats import bonferroni, energy_distance_2d, ks_two_sample
from .torus_noise import NoiseRealization, sample_noise

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

MIN_SAMPLES = 100
P_THRESHOLD = 0.01


@dataclass(frozen=True, eq=False)
class WindingMean:
    """``psi_theta(0, .; -T)``: quenched mean winding of the polymer endpoint"""
    theta: float
    T: float
    field: ScalarField

    def increment(self, x: float) -> float:
        """``x + psi(0, x) - psi(0, 0)``."""
        index = self.field.grid.space_index_of(x)
        return float(x + self.field.values[index] - self.field.values[0])


def _check_white_step(noise: NoiseRealization) -> None:
    grid = noise.grid
    if noise.is_white and grid.dt > grid.dx**2 / 4.0 * (1.0 + 1e-12):
        raise GridError(f"white noise requires dt <= dx^2/4 (dt={grid.dt}, dx={grid.dx})")


def winding_mean(noise: NoiseRealization, theta: float, T: float) -> WindingMean:
    """``M / Z`` from the companion field, with ``theta`` entering as a tilt of the flat data.

    Raises:
        GridError: If a white-noise grid violates ``dt <= dx^2 / 4``
        PositivityLostError: If ``Z`` loses positivity
    """
    _check_white_step(noise)
    z, m = first_moment_field(noise, -T, 0.0, tilt=theta)
    return WindingMean(theta, T, ScalarField(noise.grid, 0.0, m.values / z.values))


def winding_mean_batch(noises: Sequence[NoiseRealization], theta: float, T: float) -> FloatArray:
    """``psi_theta(0, .; -T)`` for many realizations, shape ``(n_space, len(noises))``."""
    _check_white_step(noises[0])
    z, m = first_moment_batch(noises, -T, 0.0, tilt=theta)
    return m / z


def stationary_winding_mean(
    noise: NoiseRealization, theta: float, T: float, bridge: BridgeSample
) -> WindingMean:
    """Winding mean with the bridge weight ``exp(B(y))`` as terminal condition instead of flat data."""
    if bridge.m != noise.grid.n_space:
        raise GridError(f"bridge grid m={bridge.m} must equal n_space={noise.grid.n_space}")
    _check_white_step(noise)
    z, m = first_moment_field(noise, -T, 0.0, tilt=theta, initial=np.exp(bridge.first[:-1]))
    return WindingMean(theta, T, ScalarField(noise.grid, 0.0, m.values / z.values))


def _gauss_legendre(lam: float, n_theta: int) -> tuple[FloatArray, FloatArray]:
    nodes, weights = np.polynomial.legendre.leggauss(n_theta)
    return 0.5 * lam * (nodes + 1.0), 0.5 * lam * weights


def busemann_increment(noise: NoiseRealization, lam: float, x: float, T: float, n_theta: int = 8) -> float:
    """``B_lam(0, x) - B_0(0, x) = lam x + int_0^lam [psi_theta(0, x) - psi_theta(0, 0)] dtheta``.

    The theta-integral uses Gauss-Legendre nodes; every node reuses the same noise.
    """
    if lam == 0.0:
        return 0.0
    index = noise.grid.space_index_of(x)
    thetas, weights = _gauss_legendre(lam, n_theta)
    total = lam * x
    for theta, weight in zip(thetas, weights):
        psi = winding_mean(noise, theta, T).field.values
        total += weight * (psi[index] - psi[0])
    return float(total)


def busemann_from_log_ratio(noise: NoiseRealization, lam: float, x: float, T: float) -> float:
    """The same increment from its definition ``log Z_lam(x) / Z_lam(0) - log Z_0(x) / Z_0(0)``."""
    index = noise.grid.space_index_of(x)

    def log_ratio(theta: float) -> float:
        values = evolve_flat(noise, -T, [0.0], tilt=theta)[0.0].values
        return float(np.log(values[index]) - np.log(values[0]))

    return float(lam * x + log_ratio(lam) - log_ratio(0.0))


# ============================================================================
# Brownian-bridge law
# ============================================================================

@dataclass(frozen=True, eq=False)
class BridgeSample:
    """Two independent discrete standard Brownian bridges on ``i / m``, ``i = 0..m``"""
    first: FloatArray
    second: FloatArray

    @property
    def m(self) -> int:
        return self.first.shape[0] - 1

    @property
    def density(self) -> FloatArray:
        """``rho(y_i) = exp(B1 + B2) / int exp(B1 + B2)`` on ``y_i = i / m``, ``i < m``."""
        weight = np.exp(self.first[:-1] + self.second[:-1])
        return weight / (weight.sum() / self.m)

    @property
    def cumulative(self) -> FloatArray:
        """``int_0^{y_i} rho`` at ``i = 0..m`` by the periodic trapezoid rule."""
        weight = np.exp(self.first + self.second)
        cells = np.concatenate([[0.0], np.cumsum(0.5 * (weight[:-1] + weight[1:]))])
        return cells / cells[-1]

    def cdf(self, x: float | FloatArray) -> FloatArray:
        grid = np.arange(self.m + 1) / self.m
        return np.interp(x, grid, self.cumulative)


def _bridges(rng: np.random.Generator, m: int) -> FloatArray:
    walk = np.concatenate([[0.0], np.cumsum(rng.standard_normal(m) / np.sqrt(m))])
    return walk - np.arange(m + 1) / m * walk[-1]


def sample_bridge_law(m: int, n: int, seed: int) -> list[BridgeSample]:
    """Exact discrete bridges: Gaussian walks with the endpoint linearly subtracted."""
    if m < 64:
        raise DomainError(f"bridge grid needs m >= 64, got {m}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 3])))
    return [BridgeSample(_bridges(rng, m), _bridges(rng, m)) for _ in range(n)]


def bridge_tilted_density(noise: NoiseRealization, T: float, bridge: BridgeSample) -> ScalarField:
    """``rho_T(y) = int_z G_{0,-T}(z, y) e^{B(y)} / int G_{0,-T}(z, y') e^{B(y')} dy' dz``."""
    if bridge.m != noise.grid.n_space:
        raise GridError(f"bridge grid m={bridge.m} must equal n_space={noise.grid.n_space}")
    dx = noise.grid.dx
    weighted = np.maximum(propagator(noise, -T, 0.0).entries, 0.0) * np.exp(bridge.first[:-1])[None, :]
    weighted /= weighted.sum(axis=1, keepdims=True) * dx
    return ScalarField(noise.grid, 0.0, weighted.sum(axis=0) * dx)


# ============================================================================
# Law comparison
# ============================================================================

@dataclass(frozen=True)
class WhiteSetup:
    """Grid and forcing for white-noise ensembles; ``dt`` defaults to ``dx^2 / 4``"""
    n_space: int = 128
    dt: float | None = None
    amplitude: float = 1.0
    seed_base: int = 0

    @property
    def step(self) -> float:
        return self.dt if self.dt is not None else 0.25 / self.n_space**2

    def grid(self, T: float) -> TorusGrid:
        return TorusGrid(self.n_space, -T, 0.0, self.step)

    def noises(self, T: float, n_samples: int) -> list[NoiseRealization]:
        spec = CovarianceSpec(is_white=True, white_amplitude=self.amplitude)
        grid = self.grid(T)
        return [sample_noise(spec, grid, self.seed_base + rep) for rep in range(n_samples)]


def environment_increments(
    theta: float, x_list: Sequence[float], T: float, n_samples: int, setup: WhiteSetup | None = None
) -> dict[float, FloatArray]:
    """``x + psi(0, x; -T) - psi(0, 0; -T)`` across independent noise seeds, keyed by ``x``."""
    setup = setup or WhiteSetup()
    grid = setup.grid(T)
    psi = winding_mean_batch(setup.noises(T, n_samples), theta, T)
    return {x: x + psi[grid.space_index_of(x)] - psi[0] for x in x_list}


def bridge_increments(
    x_list: Sequence[float], n_samples: int, m: int, seed: int
) -> dict[float, FloatArray]:
    samples = sample_bridge_law(m, n_samples, seed)
    cdfs = np.array([sample.cumulative for sample in samples])
    grid = np.arange(m + 1) / m
    return {x: np.array([np.interp(x, grid, row) for row in cdfs]) for x in x_list}


@dataclass
class LawComparison:
    """Per-point KS rows and joint energy-distance rows"""
    marginals: list[dict[str, Any]]
    joint: list[dict[str, Any]]

    @property
    def passed(self) -> bool:
        return all(row["p_adjusted"] > P_THRESHOLD for row in self.marginals)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.marginals)


def compare_laws(
    environment: dict[float, FloatArray],
    bridges: dict[float, FloatArray],
    x_list: Sequence[float],
    pairs: Sequence[tuple[float, float]] = (),
    *,
    seed: int = 0,
) -> LawComparison:
    """KS per point with Bonferroni correction, energy distance for pairs of points.

    Raises:
        InsufficientSamplesError: If either ensemble has fewer than 100 samples
    """
    for samples in (environment, bridges):
        size = min(len(values) for values in samples.values())
        if size < MIN_SAMPLES:
            raise InsufficientSamplesError(size, MIN_SAMPLES)
    results = [ks_two_sample(environment[x], bridges[x]) for x in x_list]
    adjusted = bonferroni([result.p_value for result in results])
    marginals = [
        {"x": x, "statistic": result.statistic, "p_value": result.p_value, "p_adjusted": p}
        for x, result, p in zip(x_list, results, adjusted)
    ]
    joint = []
    for first, second in pairs:
        env_points = np.column_stack([environment[first], environment[second]])
        bridge_points = np.column_stack([bridges[first], bridges[second]])
        result = energy_distance_2d(env_points, bridge_points, seed=seed)
        joint.append({"x1": first, "x2": second, "statistic": result.statistic, "p_value": result.p_value})
    return LawComparison(marginals, joint)


def law_comparison(
    theta: float,
    x_list: Sequence[float],
    T: float,
    n_env_samples: int,
    n_bridge_samples: int,
    *,
    setup: WhiteSetup | None = None,
    bridge_seed: int = 0,
    joint: bool = True,
) -> LawComparison:
    """Compare the finite-``T`` winding increments with the bridge law at ``x_list``."""
    for size in (n_env_samples, n_bridge_samples):
        if size < MIN_SAMPLES:
            raise InsufficientSamplesError(size, MIN_SAMPLES)
    setup = setup or WhiteSetup()
    environment = environment_increments(theta, x_list, T, n_env_samples, setup)
    bridges = bridge_increments(x_list, n_bridge_samples, setup.n_space, bridge_seed)
    pairs = list(combinations(x_list, 2)) if joint else []
    comparison = compare_laws(environment, bridges, x_list, pairs, seed=bridge_seed)
    logger.info(f"law comparison theta={theta} T={T}: passed={comparison.passed}")
    return comparison
