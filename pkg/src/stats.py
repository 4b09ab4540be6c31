"""Statistical tooling: KS tests, log-rate regression, confidence intervals"""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats as sps
from scipy.spatial.distance import cdist

from .models import DomainError, InsufficientSamplesError, ScalarField

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float

    def to_dict(self) -> dict[str, Any]:
        return {"statistic": self.statistic, "p_value": self.p_value}


def ks_two_sample(a: ArrayLike, b: ArrayLike) -> KSResult:
    """Two-sample Kolmogorov-Smirnov test with the exact statistic and asymptotic p-value.

    Raises:
        InsufficientSamplesError: If either sample is empty
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InsufficientSamplesError(min(a.size, b.size), 1)
    result = sps.ks_2samp(a, b, method="asymp")
    return KSResult(float(result.statistic), float(result.pvalue))


def grid_cdf(density: ScalarField):
    """CDF on ``[0, 1)`` of the piecewise-linear periodic interpolant of a grid density."""
    values = np.asarray(density.values, dtype=np.float64)
    dx = density.grid.dx
    following = np.roll(values, -1)
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (values + following) * dx)])
    total = cumulative[-1]

    def cdf(x: ArrayLike) -> FloatArray:
        x = np.mod(np.asarray(x, dtype=np.float64), 1.0)
        cell = np.minimum((x / dx).astype(np.int64), values.size - 1)
        h = x - cell * dx
        slope = (following[cell] - values[cell]) / dx
        return (cumulative[cell] + values[cell] * h + 0.5 * slope * h**2) / total

    return cdf


def ks_against_density(samples: ArrayLike, density: ScalarField) -> KSResult:
    """One-sample KS test of torus-valued samples against a grid density."""
    samples = np.mod(np.asarray(samples, dtype=np.float64).ravel(), 1.0)
    if samples.size == 0:
        raise InsufficientSamplesError(0, 1)
    result = sps.kstest(samples, grid_cdf(density))
    return KSResult(float(result.statistic), float(result.pvalue))


def bonferroni(p_values: Sequence[float]) -> list[float]:
    """Bonferroni-adjusted p-values ``min(1, m p)``."""
    m = len(p_values)
    return [min(1.0, m * p) for p in p_values]


def sign_test(differences: ArrayLike) -> float:
    """One-sided p-value that positive differences dominate (ties dropped)."""
    differences = np.asarray(differences, dtype=np.float64)
    positive = int(np.sum(differences > 0))
    n = int(np.sum(differences != 0))
    if n == 0:
        return 1.0
    return float(sps.binomtest(positive, n, 0.5, alternative="greater").pvalue)


def energy_distance_2d(
    a: ArrayLike, b: ArrayLike, *, n_permutations: int = 200, seed: int = 0
) -> KSResult:
    """Energy distance between two samples of points in the plane with a permutation p-value.

    Args:
        a: Points of shape ``(n, 2)``
        b: Points of shape ``(m, 2)``
        n_permutations: Relabelings used for the null distribution
        seed: Permutation seed

    Returns:
        Statistic and p-value packaged like a KS result
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise InsufficientSamplesError(min(len(a), len(b)), 2)
    pooled = np.concatenate([a, b])
    distances = cdist(pooled, pooled)
    n = len(a)

    def statistic(labels: NDArray[np.bool_]) -> float:
        first, second = labels, ~labels
        cross = distances[np.ix_(first, second)].mean()
        within_first = distances[np.ix_(first, first)].mean()
        within_second = distances[np.ix_(second, second)].mean()
        return 2.0 * cross - within_first - within_second

    labels = np.zeros(len(pooled), dtype=bool)
    labels[:n] = True
    observed = statistic(labels)
    rng = np.random.default_rng(seed)
    exceed = sum(statistic(rng.permutation(labels)) >= observed for _ in range(n_permutations))
    return KSResult(float(observed), (exceed + 1) / (n_permutations + 1))


# ============================================================================
# Regression and intervals
# ============================================================================

@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of ``log gap = intercept + slope t`` with a bootstrap interval"""
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    level: float = 0.95

    @property
    def excludes_zero(self) -> bool:
        return self.ci_high < 0 or self.ci_low > 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
        }


def rate_fit(
    times: ArrayLike,
    gaps: ArrayLike,
    *,
    n_boot: int = 2000,
    level: float = 0.95,
    seed: int = 0,
) -> RateFit:
    """Fit the exponential rate of positive gaps by regression of ``log gap`` on ``t``.

    The interval comes from a residual bootstrap; residuals are inflated by
    ``sqrt(n / (n - 2))`` to undo the shrinkage of the fitted residuals.

    Raises:
        DomainError: If a gap is nonpositive or fewer than two points are given
    """
    times = np.asarray(times, dtype=np.float64)
    gaps = np.asarray(gaps, dtype=np.float64)
    if times.size < 2 or times.size != gaps.size:
        raise DomainError("rate_fit needs at least two (t, gap) pairs")
    if np.any(gaps <= 0):
        raise DomainError("rate_fit requires positive gaps")
    logs = np.log(gaps)
    slope, intercept = np.polyfit(times, logs, 1)
    fitted = intercept + slope * times
    residuals = logs - fitted
    n = times.size
    if n <= 2 or np.allclose(residuals, 0.0, atol=1e-12):
        return RateFit(float(slope), float(intercept), float(slope), float(slope), level)
    residuals = (residuals - residuals.mean()) * np.sqrt(n / (n - 2))
    rng = np.random.default_rng(seed)
    resampled = fitted + rng.choice(residuals, size=(n_boot, n), replace=True)
    design = np.vstack([times, np.ones(n)]).T
    slopes = np.linalg.lstsq(design, resampled.T, rcond=None)[0][0]
    tail = 50.0 * (1.0 - level)
    low, high = np.percentile(slopes, [tail, 100.0 - tail])
    return RateFit(float(slope), float(intercept), float(low), float(high), level)


@dataclass(frozen=True)
class Aggregate:
    """Mean of per-rep values with standard error and a t-interval"""
    mean: float
    stderr: float
    ci_low: float
    ci_high: float
    n: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n": self.n,
        }

    def overlaps(self, other: Aggregate) -> bool:
        return self.ci_low <= other.ci_high and other.ci_low <= self.ci_high

    def contains(self, value: float, n_se: float = 3.0) -> bool:
        """Whether ``value`` lies within ``n_se`` standard errors of the mean."""
        return abs(self.mean - value) <= n_se * self.stderr


def mean_ci(values: ArrayLike, level: float = 0.95) -> Aggregate:
    values = np.asarray(values, dtype=np.float64).ravel()
    n = values.size
    if n == 0:
        raise InsufficientSamplesError(0, 1)
    mean = float(values.mean())
    if n == 1:
        return Aggregate(mean, 0.0, mean, mean, 1)
    stderr = float(values.std(ddof=1) / np.sqrt(n))
    half = float(sps.t.ppf(0.5 + level / 2.0, n - 1)) * stderr
    return Aggregate(mean, stderr, mean - half, mean + half, n)


def weighted_mean_ci(values: ArrayLike, weights: ArrayLike, level: float = 0.95) -> Aggregate:
    """Self-normalized importance-weighted mean with a delta-method standard error."""
    values = np.asarray(values, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    n = values.size
    if n < 2:
        raise InsufficientSamplesError(n, 2)
    total = weights.sum()
    mean = float(np.dot(weights, values) / total)
    normalized = weights / weights.mean()
    stderr = float(np.sqrt(np.sum((normalized * (values - mean)) ** 2) / (n * (n - 1))))
    half = float(sps.norm.ppf(0.5 + level / 2.0)) * stderr
    return Aggregate(mean, stderr, mean - half, mean + half, n)


def effective_sample_size(weights: ArrayLike) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    weights = np.asarray(weights, dtype=np.float64)
    return float(weights.sum() ** 2 / np.sum(weights**2))
