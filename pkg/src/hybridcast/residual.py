"""Residual modelling and iterative error feedback.

Residuals follow ``e_t = yhat_t - y_t`` (positive means over-forecast) and
adjusted forecasts subtract the predicted residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, HybridcastError, InfeasibleError
from .forecast import Forecaster, ForecasterId, ForecastRequest, build_forecaster
from .series import SplitSpec, TimeSeries, WindowSpec


@dataclass(frozen=True, eq=False)
class ResidualSeries:
    errors: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        e = np.asarray(self.errors, dtype=float)
        if e.ndim != 1 or not np.all(np.isfinite(e)):
            raise HybridcastError("residuals must be a finite 1-d sequence")
        object.__setattr__(self, "errors", e)
        if self.timestamps is not None and len(self.timestamps) != len(e):
            raise HybridcastError("residual timestamps misaligned with errors")

    def __len__(self) -> int:
        return len(self.errors)


@dataclass(frozen=True)
class FeedbackConfig:
    max_iters: int = 10
    rel_tol: float = 1e-3

    def __post_init__(self):
        if self.max_iters < 1 or not self.rel_tol > 0:
            raise HybridcastError(f"invalid feedback config {self}")


def compute_residuals(forecasts, actuals, timestamps=None) -> ResidualSeries:
    f, y = np.asarray(forecasts, dtype=float), np.asarray(actuals, dtype=float)
    if f.shape != y.shape:
        raise HybridcastError(f"length mismatch: {f.size} forecasts vs {y.size} actuals")
    return ResidualSeries(f - y, timestamps)


def adjust_forecast(yhat, ehat):
    return yhat - ehat


def _as_forecaster(f: ForecasterId | Forecaster) -> Forecaster:
    return f if isinstance(f, Forecaster) else build_forecaster(f)


@dataclass
class ResidualModel:
    """One-step residual forecaster over a trailing window of residuals."""

    forecaster: Forecaster
    context_len: int
    residuals: ResidualSeries

    def predict_next(self, history=None) -> float:
        h = self.residuals.errors if history is None else np.asarray(history, dtype=float)
        if len(h) < self.context_len:
            raise InfeasibleError(
                f"residual history of {len(h)} points is shorter than the {self.context_len}-point context"
            )
        return float(self.forecaster.point_forecast(h[len(h) - self.context_len :], 1)[0])


def fit_residual_model(residuals: ResidualSeries, forecaster_id: ForecasterId | Forecaster, window_spec: WindowSpec) -> ResidualModel:
    f = _as_forecaster(forecaster_id)
    need = max(window_spec.context_len, f.min_context())
    if len(residuals) < need:
        raise InfeasibleError(
            f"residual modelling infeasible: {len(residuals)} residuals available, "
            f"{need} needed for a {window_spec.context_len}-point context"
        )
    if window_spec.context_len < f.min_context():
        raise InfeasibleError(
            f"{f.kind} needs a context of >= {f.min_context()} residuals, got {window_spec.context_len}"
        )
    return ResidualModel(f, window_spec.context_len, residuals)


def rolling_residual_forecasts(errors, forecaster_id: ForecasterId | Forecaster, context_len: int) -> np.ndarray:
    """ehat[k] predicted from errors[k - context_len:k]; NaN where history is too short."""
    e = np.asarray(errors, dtype=float)
    model = fit_residual_model(ResidualSeries(e), forecaster_id, WindowSpec(context_len))
    out = np.full(len(e), np.nan)
    for k in range(context_len, len(e)):
        out[k] = model.predict_next(e[k - context_len : k])
    return out


@dataclass(frozen=True)
class ResidualBacktest:
    windows: np.ndarray
    yhat: np.ndarray
    ehat: np.ndarray
    adjusted: np.ndarray
    actual: np.ndarray


def run_residual_backtest(
    series: TimeSeries | np.ndarray,
    window_spec: WindowSpec,
    forecaster: ForecasterId | Forecaster,
    residual_forecaster: ForecasterId | Forecaster,
    residual_context: int | None = None,
    n_samples: int = 100,
    seed: int = 0,
) -> ResidualBacktest:
    """One-step forecasts, their rolling residual model, and adjusted forecasts.

    Only windows with a full residual history are returned.
    """
    f = _as_forecaster(forecaster)
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    L, stride = window_spec.context_len, window_spec.stride
    rc = residual_context or L
    n_win = WindowSpec(L, 1, stride).n_windows(len(values))
    yhat = np.empty(n_win)
    actual = np.empty(n_win)
    for k in range(n_win):
        s = k * stride
        fa = f.forecast_arrays(ForecastRequest(values[s : s + L], 1, n_samples, window_id=k), seed=[seed, k])
        yhat[k] = fa.points[0]
        actual[k] = values[s + L]
    errors = compute_residuals(yhat, actual).errors
    if n_win <= rc:
        raise InfeasibleError(f"{n_win} windows leave no residual history of {rc} points")
    ehat = rolling_residual_forecasts(errors, residual_forecaster, rc)
    keep = np.arange(rc, n_win)
    return ResidualBacktest(keep, yhat[keep], ehat[keep], adjust_forecast(yhat[keep], ehat[keep]), actual[keep])


@dataclass(frozen=True)
class FeedbackResult:
    forecasts: np.ndarray  # best iteration, one per window
    targets: np.ndarray  # series index forecast by each window
    trace: tuple[float, ...]  # validation RMSE per iteration, iteration 0 first
    best_iteration: int

    @property
    def n_iterations(self) -> int:
        return len(self.trace)


def _one_pass(f: Forecaster, values, L, stride, n_win, n_samples, seed, channel):
    out = np.empty(n_win)
    for k in range(n_win):
        s = k * stride
        exog = None if channel is None else channel[s : s + L]
        req = ForecastRequest(values[s : s + L], 1, n_samples, exogenous=exog, window_id=k)
        out[k] = f.forecast_arrays(req, seed=[seed, k]).points[0]
    return out


def iterative_feedback(
    series: TimeSeries | np.ndarray,
    forecaster: ForecasterId | Forecaster,
    cfg: FeedbackConfig = FeedbackConfig(),
    window_spec: WindowSpec = WindowSpec(168),
    split: SplitSpec = SplitSpec(),
    n_samples: int = 100,
    seed: int = 0,
) -> FeedbackResult:
    """Re-forecast with the previous pass's residuals as an exogenous channel.

    Works on the training + validation part of the series. Pass 0 has no
    exogenous input; pass k feeds pass k-1 residuals, aligned to each window's
    context (NaN where no residual exists yet). Stops once the relative
    improvement in validation RMSE drops below ``rel_tol`` or after
    ``max_iters`` feedback passes, and returns the lowest-RMSE pass.
    """
    f = _as_forecaster(forecaster)
    if not f.accepts_exogenous:
        raise CapabilityError(f"forecaster {f.kind!r} does not accept exogenous input")
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    train_end, val_end = split.bounds(len(values))
    values = values[:val_end]
    L, stride = window_spec.context_len, window_spec.stride
    n_win = WindowSpec(L, 1, stride).n_windows(len(values))
    targets = np.arange(n_win) * stride + L
    is_val = targets >= train_end
    if n_win == 0 or not is_val.any():
        raise InfeasibleError("no feedback windows target the validation portion")
    actual = values[targets]

    def val_rmse(fc):
        return math.sqrt(float(np.mean((fc[is_val] - actual[is_val]) ** 2)))

    passes = [_one_pass(f, values, L, stride, n_win, n_samples, seed, None)]
    trace = [val_rmse(passes[0])]
    for _ in range(cfg.max_iters):
        channel = np.full(len(values), np.nan)
        channel[targets] = passes[-1] - actual
        passes.append(_one_pass(f, values, L, stride, n_win, n_samples, seed, channel))
        trace.append(val_rmse(passes[-1]))
        prev = trace[-2]
        if prev == 0 or (prev - trace[-1]) / prev < cfg.rel_tol:
            break
    best = int(np.argmin(trace))
    return FeedbackResult(passes[best], targets, tuple(trace), best)


def trace_to_csv(trace) -> str:
    lines = ["iteration,validation_rmse"]
    lines += [f"{i},{r!r}" for i, r in enumerate(trace)]
    return "\n".join(lines) + "\n"
