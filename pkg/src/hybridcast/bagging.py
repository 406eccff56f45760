"""Bootstrap aggregation of forecast sample draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ForecastError, HybridcastError
from .forecast import Forecaster, ForecasterId, ForecastRequest, build_forecaster
from .series import TimeSeries, WindowSpec, window_iter


@dataclass(frozen=True)
class BaggingConfig:
    n_samples: int = 100  # n: base draws per forecast
    subsample: int = 40  # b: picks per bootstrap mean
    repeats: int = 100  # m: bootstrap means averaged
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.subsample < 1 or self.repeats < 1:
            raise HybridcastError(f"invalid bagging config {self}")


def bootstrap_mean(samples, subsample: int, rng: np.random.Generator) -> float:
    """Mean of ``subsample`` uniform picks, with replacement, from ``samples``."""
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise HybridcastError("cannot bootstrap an empty sample")
    idx = rng.integers(0, s.size, size=subsample)
    # averaging offsets from a pivot keeps constant draws exact
    return float(s[0] + (s[idx] - s[0]).mean())


def bag_forecast(samples, cfg: BaggingConfig = BaggingConfig(), rng: np.random.Generator | None = None) -> float:
    """Average of ``cfg.repeats`` bootstrap means (bootstrap_mean_all)."""
    s = np.asarray(samples, dtype=float)
    if s.ndim != 1 or s.size != cfg.n_samples:
        raise HybridcastError(f"expected {cfg.n_samples} draws, got {s.size}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    idx = rng.integers(0, s.size, size=(cfg.repeats, cfg.subsample))
    return float(s[0] + (s[idx] - s[0]).mean(axis=1).mean())


def bag_steps(samples: np.ndarray, cfg: BaggingConfig, seed) -> np.ndarray:
    """Bag each row of a (steps, n) draw matrix with one generator seeded by ``seed``."""
    rng = np.random.default_rng(seed)
    return np.array([bag_forecast(row, cfg, rng) for row in samples])


@dataclass(frozen=True)
class BaggedWindow:
    window: int
    point: float
    single_draw: float
    bagged: float
    actual: float


def run_bagged_backtest(
    series: TimeSeries | np.ndarray,
    window_spec: WindowSpec,
    forecaster: ForecasterId | Forecaster,
    cfg: BaggingConfig = BaggingConfig(),
) -> list[BaggedWindow]:
    """Slide over the series and bag each window's step-1 draws.

    Window k draws forecast samples from ``[cfg.seed, k]`` and bags them with
    ``cfg.seed + k``; windows are therefore independent of evaluation order.
    ``single_draw`` is the first forecast draw, i.e. what a sampling forecaster
    emits when asked for a single path.
    """
    f = forecaster if isinstance(forecaster, Forecaster) else build_forecaster(forecaster)
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    spec = WindowSpec(window_spec.context_len, 1, window_spec.stride)
    if spec.n_windows(len(values)) == 0:
        raise HybridcastError("series admits no complete window")
    out = []
    for k, (ctx, tgt) in enumerate(window_iter(values, spec)):
        fa = f.forecast_arrays(ForecastRequest(ctx, 1, cfg.n_samples, window_id=k), seed=[cfg.seed, k])
        if fa.samples is None:
            raise ForecastError(f"forecaster {f.kind!r} produced no sample draws to bag")
        draws = fa.samples[0]
        bagged = bag_forecast(draws, cfg, np.random.default_rng(cfg.seed + k))
        out.append(BaggedWindow(k, float(fa.points[0]), float(draws[0]), bagged, float(tgt[0])))
    return out
