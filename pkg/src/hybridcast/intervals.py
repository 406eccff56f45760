"""Analytic prediction intervals for a linear two-model stack, plus calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CalibrationError, HybridcastError
from .forecast import normal_quantile
from .stacking import StackWeights

# 2 * z_{0.9}: the P10-P90 spread of a unit normal, as a rounded constant.
DECILE_SPREAD = 2.5631


@dataclass(frozen=True)
class SigmaComponents:
    sigma_a: float
    sigma_b: float

    def __post_init__(self):
        for v in (self.sigma_a, self.sigma_b):
            if not (math.isfinite(v) and v >= 0):
                raise HybridcastError(f"sigma components must be finite and >= 0, got {self}")


@dataclass(frozen=True)
class IntervalConfig:
    z: float = 1.96
    inflation: float = 1.0

    def __post_init__(self):
        if not self.z > 0:
            raise HybridcastError(f"z must be > 0, got {self.z}")
        if not self.inflation >= 1:
            raise HybridcastError(f"inflation must be >= 1, got {self.inflation}")

    @classmethod
    def for_level(cls, level: float, inflation: float = 1.0) -> "IntervalConfig":
        return cls(z=normal_quantile(0.5 + level / 2), inflation=inflation)


@dataclass(frozen=True)
class PredictionInterval:
    mean: float
    lower: float
    upper: float
    level: float = 0.95
    sigma_ens: float = 0.0

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper


def sigma_from_samples(samples) -> float:
    s = np.asarray(samples, dtype=float)
    if s.size < 2:
        raise HybridcastError(f"need >= 2 samples for a standard deviation, got {s.size}")
    return float(np.std(s, ddof=1))


def sigma_from_deciles(p10, p90):
    """Normal-approximation sigma from the P10-P90 spread. Vectorized."""
    p10, p90 = np.asarray(p10, dtype=float), np.asarray(p90, dtype=float)
    if np.any(p90 < p10):
        raise HybridcastError("P90 below P10")
    out = (p90 - p10) / DECILE_SPREAD
    return float(out) if out.ndim == 0 else out


def ensemble_sigma(w: StackWeights, s: SigmaComponents) -> float:
    """Stack sigma assuming independent components; the intercept adds no variance."""
    return math.sqrt(w.w1**2 * s.sigma_a**2 + w.w2**2 * s.sigma_b**2)


def _level(z: float) -> float:
    return 2 * (0.5 * (1 + math.erf(z / math.sqrt(2)))) - 1


def prediction_interval(mu: float, sigma_ens: float, cfg: IntervalConfig = IntervalConfig()) -> PredictionInterval:
    if sigma_ens < 0:
        raise HybridcastError(f"sigma_ens must be >= 0, got {sigma_ens}")
    half = cfg.z * cfg.inflation * sigma_ens
    return PredictionInterval(mu, mu - half, mu + half, _level(cfg.z), sigma_ens)


def interval_bounds(mu, sigma_ens, cfg: IntervalConfig = IntervalConfig()):
    """Array version of ``prediction_interval``: returns (lower, upper)."""
    half = cfg.z * cfg.inflation * np.asarray(sigma_ens, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return mu - half, mu + half


def _bounds(intervals) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(intervals, tuple) and len(intervals) == 2 and not isinstance(intervals[0], PredictionInterval):
        lo, hi = intervals
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    return (np.array([iv.lower for iv in intervals], dtype=float),
            np.array([iv.upper for iv in intervals], dtype=float))


def coverage(intervals: Sequence[PredictionInterval] | tuple, actuals) -> float:
    """Fraction of actuals inside their interval (bounds inclusive).

    ``intervals`` is a sequence of PredictionInterval or a (lower, upper) pair of arrays.
    """
    lo, hi = _bounds(intervals)
    y = np.asarray(actuals, dtype=float)
    if lo.shape != y.shape:
        raise HybridcastError(f"length mismatch: {lo.size} intervals vs {y.size} actuals")
    if y.size == 0:
        raise HybridcastError("coverage of an empty set is undefined")
    return float(np.mean((lo <= y) & (y <= hi)))


def mean_width(intervals: Sequence[PredictionInterval] | tuple) -> float:
    lo, hi = _bounds(intervals)
    if lo.size == 0:
        raise HybridcastError("mean width of an empty set is undefined")
    return float(np.mean(hi - lo))


def calibrate_inflation(intervals, actuals, target: float = 0.95, max_factor: float = 2.0) -> tuple[float, float]:
    """Smallest factor on the 0.01 grid [1, max_factor] reaching ``target`` coverage.

    Intervals are rescaled about their midpoint. Returns (factor, coverage);
    raises CalibrationError carrying the coverage achieved at ``max_factor``.
    """
    lo, hi = _bounds(intervals)
    y = np.asarray(actuals, dtype=float)
    if y.size < 100:
        raise HybridcastError(f"need >= 100 validation points to calibrate, got {y.size}")
    if lo.shape != y.shape:
        raise HybridcastError(f"length mismatch: {lo.size} intervals vs {y.size} actuals")
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    dev = np.abs(y - mid)
    cov = 0.0
    factor = 1.0
    for k in range(100, int(round(max_factor * 100)) + 1):
        factor = k / 100
        cov = float(np.mean(dev <= factor * half))
        if cov >= target:
            return factor, cov
    raise CalibrationError(
        f"target coverage {target} unreachable: {cov:.4f} at inflation {factor}", cov, factor
    )
