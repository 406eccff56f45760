"""Forecaster interface, baseline forecasters and the recorded-forecast adapter.

Every forecaster maps a context window to one probabilistic forecast per
horizon step. Sample-based forecasters report the sample mean as their point
forecast; decile-based ones report the median (P50).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Any, Mapping

import numpy as np

from .errors import (
    CapabilityError,
    ContextTooShortError,
    ForecastError,
    RankError,
    RecordError,
)

DECILE_LEVELS = tuple(i / 10 for i in range(1, 10))
_STD_NORMAL = NormalDist()
DECILE_Z = np.array([_STD_NORMAL.inv_cdf(q) for q in DECILE_LEVELS])


def normal_quantile(q: float) -> float:
    """Standard normal inverse CDF."""
    return _STD_NORMAL.inv_cdf(q)


def _close(a: float, b: float, tol: float = 1e-9) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@dataclass(frozen=True, eq=False)
class ForecastDistribution:
    step: int
    point: float
    samples: np.ndarray | None = None
    deciles: np.ndarray | None = None

    def __post_init__(self):
        if self.samples is None and self.deciles is None:
            raise ForecastError(f"step {self.step}: need samples or deciles")
        if int(self.step) != self.step or self.step < 1:
            raise ForecastError(f"step must be a positive integer, got {self.step!r}")
        if not math.isfinite(self.point):
            raise ForecastError(f"step {self.step}: non-finite point forecast")
        if self.deciles is not None:
            d = np.asarray(self.deciles, dtype=float)
            if d.shape != (9,):
                raise ForecastError(f"step {self.step}: deciles must have 9 values, got {d.shape}")
            if not np.all(np.isfinite(d)):
                raise ForecastError(f"step {self.step}: non-finite decile")
            bad = np.nonzero(np.diff(d) < 0)[0]
            if len(bad):
                i = int(bad[0])
                raise ForecastError(
                    f"step {self.step}: deciles not non-decreasing "
                    f"(P{10 * (i + 2)}={d[i + 1]} < P{10 * (i + 1)}={d[i]})"
                )
            object.__setattr__(self, "deciles", d)
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=float)
            if s.ndim != 1 or len(s) == 0 or not np.all(np.isfinite(s)):
                raise ForecastError(f"step {self.step}: samples must be a non-empty finite vector")
            object.__setattr__(self, "samples", s)
            mean_ok = _close(self.point, float(s.mean()))
            median_ok = self.deciles is not None and _close(self.point, float(self.deciles[4]))
            if not (mean_ok or median_ok):
                raise ForecastError(
                    f"step {self.step}: point {self.point} is neither the sample mean nor P50"
                )
        elif not _close(self.point, float(self.deciles[4])):
            raise ForecastError(f"step {self.step}: decile-based point must equal P50")


@dataclass(frozen=True, eq=False)
class ForecastRequest:
    context: np.ndarray
    horizon: int = 1
    n_samples: int = 100
    exogenous: np.ndarray | None = None
    window_id: int | None = None  # only used by the recorded-forecast adapter

    def __post_init__(self):
        ctx = np.asarray(self.context, dtype=float)
        if ctx.ndim != 1 or len(ctx) == 0:
            raise ForecastError("context must be a non-empty 1-d sequence")
        object.__setattr__(self, "context", ctx)
        if self.horizon < 1:
            raise ForecastError(f"horizon must be >= 1, got {self.horizon}")
        if self.n_samples < 1:
            raise ForecastError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.exogenous is not None:
            ex = np.asarray(self.exogenous, dtype=float)
            if ex.shape != ctx.shape:
                raise ForecastError(
                    f"exogenous length {len(ex)} does not match context length {len(ctx)}"
                )
            object.__setattr__(self, "exogenous", ex)


@dataclass(frozen=True)
class ForecasterId:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ForecastArrays:
    """Vectorized form of a horizon's worth of ForecastDistributions."""

    points: np.ndarray
    samples: np.ndarray | None = None  # (horizon, n)
    deciles: np.ndarray | None = None  # (horizon, 9)

    def distributions(self) -> list[ForecastDistribution]:
        return [
            ForecastDistribution(
                step=h + 1,
                point=float(self.points[h]),
                samples=None if self.samples is None else self.samples[h],
                deciles=None if self.deciles is None else self.deciles[h],
            )
            for h in range(len(self.points))
        ]


# --- primitives --------------------------------------------------------------


def sample_forecast(point: float, residual_sigma: float, n: int, seed) -> np.ndarray:
    """n Gaussian draws ``point + sigma * z`` from a seeded generator."""
    if residual_sigma < 0:
        raise ForecastError(f"residual_sigma must be >= 0, got {residual_sigma}")
    if n < 1:
        raise ForecastError(f"n must be >= 1, got {n}")
    z = np.random.default_rng(seed).standard_normal(n)
    return point + residual_sigma * z


def deciles_from_samples(samples) -> np.ndarray:
    """Empirical P10..P90 with linear interpolation between order statistics."""
    s = np.asarray(samples, dtype=float)
    if s.ndim != 1 or len(s) < 10:
        raise ForecastError(f"need at least 10 samples for deciles, got {s.size}")
    d = np.quantile(s, DECILE_LEVELS, method="linear")
    # guard against 1-ulp inversions from interpolation
    return np.maximum.accumulate(d)


@dataclass(frozen=True)
class ARFit:
    coef: np.ndarray  # a_1..a_p, lag order ascending
    intercept: float
    sigma: float  # residual std, degrees-of-freedom corrected
    exog_coef: float = 0.0
    leverage: float = 0.0  # x0' (X'X)^-1 x0 for the next-step regressors

    @property
    def p(self) -> int:
        return len(self.coef)

    def psi_weights(self, horizon: int) -> np.ndarray:
        psi = np.zeros(horizon)
        psi[0] = 1.0
        for j in range(1, horizon):
            k = min(j, self.p)
            psi[j] = np.dot(self.coef[:k], psi[j - 1 :: -1][:k])
        return psi

    def forecast_mean(self, context: np.ndarray, horizon: int, exog_last: float = 0.0) -> np.ndarray:
        p = self.p
        hist = list(context[len(context) - p :]) if p else []
        out = np.empty(horizon)
        for h in range(horizon):
            yhat = self.intercept
            for i in range(p):
                yhat += self.coef[i] * hist[-1 - i]
            if h == 0:
                yhat += self.exog_coef * exog_last
            out[h] = yhat
            if p:
                hist.append(yhat)
        return out


def fit_ar_ols(context, p: int, exogenous=None) -> ARFit:
    """Least-squares AR(p) with intercept.

    With ``exogenous`` the lag-1 value of that channel is an extra regressor.
    Rows whose exogenous value is NaN are dropped. The channel is ignored
    entirely when it has no finite non-zero value, or too few finite values
    to estimate its coefficient.
    """
    y = np.asarray(context, dtype=float)
    if p < 0 or int(p) != p:
        raise ForecastError(f"lag order must be a non-negative integer, got {p!r}")
    if len(y) < 2 * p + 1:
        raise ContextTooShortError(f"ar_ols(p={p}) needs >= {2 * p + 1} points, got {len(y)}")
    n = len(y)
    target = y[p:]
    cols = [np.ones(n - p)]
    for i in range(1, p + 1):
        cols.append(y[p - i : n - i])
    use_exog = False
    if exogenous is not None:
        x = np.asarray(exogenous, dtype=float)
        finite = np.isfinite(x)
        use_exog = bool(np.any(x[finite] != 0))
    if use_exog:
        if p == 0:
            lagged = np.concatenate([[np.nan], x[:-1]])
        else:
            lagged = x[p - 1 : n - 1]
        keep = np.isfinite(lagged)
        # too few observed channel values to estimate its coefficient: drop it
        use_exog = int(keep.sum()) >= len(cols) + 2
    if use_exog:
        X = np.column_stack(cols + [lagged])[keep]
        target = target[keep]
    else:
        X = np.column_stack(cols)
    beta, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1]:
        raise RankError(f"rank-deficient AR design: rank {rank} < {X.shape[1]} columns")
    resid = target - X @ beta
    dof = max(len(target) - X.shape[1], 1)
    sigma = float(np.sqrt(resid @ resid / dof))
    x0 = [1.0] + [y[n - i] for i in range(1, p + 1)]
    if use_exog:
        x0.append(float(x[-1]) if np.isfinite(x[-1]) else 0.0)
    x0 = np.array(x0)
    leverage = float(x0 @ np.linalg.solve(X.T @ X, x0))
    return ARFit(
        coef=beta[1 : p + 1].copy(),
        intercept=float(beta[0]),
        sigma=sigma,
        exog_coef=float(beta[-1]) if use_exog else 0.0,
        leverage=leverage,
    )


# --- forecasters ---------------------------------------------------------------


class Forecaster:
    """Base class. Subclasses implement ``mean_and_sigma``."""

    kind = "base"
    accepts_exogenous = False
    default_output = "samples"
    _param_names: tuple[str, ...] = ()

    def __init__(self, bias: float = 0.0, sigma: float | None = None, output: str | None = None):
        self.bias = float(bias)
        if sigma is not None and sigma < 0:
            raise ForecastError(f"sigma must be >= 0, got {sigma}")
        self.sigma = sigma
        self.output = output or self.default_output
        if self.output not in ("samples", "deciles"):
            raise ForecastError(f"output must be 'samples' or 'deciles', got {self.output!r}")

    def min_context(self) -> int:
        return 1

    def mean_and_sigma(self, context, horizon, exogenous=None) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _check(self, req: ForecastRequest) -> None:
        if req.exogenous is not None and not self.accepts_exogenous:
            raise CapabilityError(f"forecaster {self.kind!r} does not accept exogenous input")
        if len(req.context) < self.min_context():
            raise ContextTooShortError(
                f"{self.kind} needs a context of >= {self.min_context()} points, got {len(req.context)}"
            )

    def forecast_arrays(self, req: ForecastRequest, seed=0) -> ForecastArrays:
        self._check(req)
        means, sigmas = self.mean_and_sigma(req.context, req.horizon, req.exogenous)
        means = means + self.bias
        if self.output == "samples":
            z = np.random.default_rng(seed).standard_normal((req.horizon, req.n_samples))
            noise = sigmas[:, None] * z
            # mean of the draws, written so zero noise gives the mean exactly
            return ForecastArrays(points=means + noise.mean(axis=1), samples=means[:, None] + noise)
        dec = means[:, None] + sigmas[:, None] * DECILE_Z[None, :]
        return ForecastArrays(points=dec[:, 4].copy(), deciles=dec)

    def forecast(self, req: ForecastRequest, seed=0) -> list[ForecastDistribution]:
        return self.forecast_arrays(req, seed).distributions()

    def point_forecast(self, context, horizon: int = 1, exogenous=None) -> np.ndarray:
        """Noise-free conditional mean, bias included."""
        req = ForecastRequest(context, horizon=horizon, n_samples=1, exogenous=exogenous)
        self._check(req)
        return self.mean_and_sigma(req.context, horizon, req.exogenous)[0] + self.bias


class SeasonalNaive(Forecaster):
    kind = "seasonal_naive"
    _param_names = ("season",)

    def __init__(self, season: int = 24, **kw):
        super().__init__(**kw)
        if season < 1:
            raise ForecastError(f"season must be >= 1, got {season}")
        self.season = int(season)

    def min_context(self) -> int:
        return self.season

    def mean_and_sigma(self, context, horizon, exogenous=None):
        m, n = self.season, len(context)
        h = np.arange(horizon)
        means = context[n - m + (h % m)]
        if self.sigma is not None:
            s1 = self.sigma
        elif n > m:
            d = context[m:] - context[:-m]
            s1 = float(np.sqrt(np.mean(d**2)))
        else:
            s1 = 0.0
        return means.astype(float), s1 * np.sqrt(h // m + 1.0)


class AROLS(Forecaster):
    kind = "ar_ols"
    accepts_exogenous = True
    _param_names = ("p",)

    def __init__(self, p: int = 24, **kw):
        super().__init__(**kw)
        if p < 0:
            raise ForecastError(f"p must be >= 0, got {p}")
        self.p = int(p)

    def min_context(self) -> int:
        return 2 * self.p + 1

    def mean_and_sigma(self, context, horizon, exogenous=None):
        fit = fit_ar_ols(context, self.p, exogenous)
        exog_last = 0.0
        if exogenous is not None and np.isfinite(exogenous[-1]):
            exog_last = float(exogenous[-1])
        means = fit.forecast_mean(context, horizon, exog_last)
        if self.sigma is not None:
            s1 = self.sigma
        else:
            # predictive sigma: noise plus coefficient-estimation error, the
            # latter via the step-1 leverage (applied to every step)
            s1 = fit.sigma * math.sqrt(1.0 + fit.leverage)
        psi = fit.psi_weights(horizon)
        return means, s1 * np.sqrt(np.cumsum(psi**2))


class ExpSmoothing(Forecaster):
    """Additive-seasonal exponential smoothing with fixed smoothing constants."""

    kind = "exp_smoothing"
    default_output = "deciles"
    _param_names = ("season", "alpha", "gamma")

    def __init__(self, season: int = 24, alpha: float = 0.3, gamma: float = 0.1, **kw):
        super().__init__(**kw)
        if season < 1:
            raise ForecastError(f"season must be >= 1, got {season}")
        if not (0 < alpha <= 1 and 0 <= gamma <= 1):
            raise ForecastError(f"need 0 < alpha <= 1 and 0 <= gamma <= 1, got {alpha}, {gamma}")
        self.season, self.alpha, self.gamma = int(season), float(alpha), float(gamma)

    def min_context(self) -> int:
        return 2 * self.season

    def mean_and_sigma(self, context, horizon, exogenous=None):
        m, a, g = self.season, self.alpha, self.gamma
        y = context.tolist()
        level = sum(y[:m]) / m
        seas = [v - level for v in y[:m]]
        sse = 0.0
        for t in range(m, len(y)):
            j = t % m
            e = y[t] - level - seas[j]
            sse += e * e
            level += a * e
            seas[j] += g * e
        n = len(y)
        h = np.arange(horizon)
        means = level + np.array([seas[(n + i) % m] for i in h])
        s1 = math.sqrt(sse / (n - m)) if self.sigma is None else self.sigma
        var = 1.0 + h * a * a + (h // m) * g * (2 * a + g)
        return means, s1 * np.sqrt(var)


class RecordedForecaster(Forecaster):
    """Replays recorded forecasts keyed by window id."""

    kind = "external"

    def __init__(self, path: str | None = None, records: Mapping | None = None):
        super().__init__()
        if records is None:
            if path is None:
                raise ForecastError("external forecaster needs 'path'")
            records = load_external(path)
        self.records = records

    def forecast_arrays(self, req: ForecastRequest, seed=0) -> ForecastArrays:
        self._check(req)
        if req.window_id is None:
            raise ForecastError("external forecaster needs a window_id")
        dists = self.records.get(req.window_id)
        if dists is None:
            raise ForecastError(f"no recorded forecast for window {req.window_id}")
        if len(dists) < req.horizon or [d.step for d in dists[: req.horizon]] != list(range(1, req.horizon + 1)):
            raise ForecastError(f"window {req.window_id}: recorded steps do not cover 1..{req.horizon}")
        dists = dists[: req.horizon]
        points = np.array([d.point for d in dists])
        samples = deciles = None
        if all(d.samples is not None for d in dists) and len({len(d.samples) for d in dists}) == 1:
            samples = np.stack([d.samples for d in dists])
        if all(d.deciles is not None for d in dists):
            deciles = np.stack([d.deciles for d in dists])
        if samples is None and deciles is None:
            raise ForecastError(f"window {req.window_id}: steps mix sample and decile outputs")
        return ForecastArrays(points, samples, deciles)

    def mean_and_sigma(self, context, horizon, exogenous=None):
        raise CapabilityError("recorded forecasts cannot be re-fitted to new contexts")


FORECASTERS: dict[str, type[Forecaster]] = {
    cls.kind: cls for cls in (SeasonalNaive, AROLS, ExpSmoothing, RecordedForecaster)
}
_COMMON_PARAMS = ("bias", "sigma", "output")


def build_forecaster(fid: ForecasterId) -> Forecaster:
    cls = FORECASTERS.get(fid.kind)
    if cls is None:
        raise ForecastError(f"unknown forecaster kind {fid.kind!r}; expected one of {sorted(FORECASTERS)}")
    allowed = ("path", "records") if cls is RecordedForecaster else cls._param_names + _COMMON_PARAMS
    unknown = sorted(set(fid.params) - set(allowed))
    if unknown:
        raise ForecastError(f"{fid.kind}: unknown parameter(s) {unknown}; allowed {list(allowed)}")
    try:
        return cls(**dict(fid.params))
    except TypeError as exc:
        raise ForecastError(f"{fid.kind}: bad parameters: {exc}") from None


def forecast(fid: ForecasterId | Forecaster, req: ForecastRequest, seed=0) -> list[ForecastDistribution]:
    f = fid if isinstance(fid, Forecaster) else build_forecaster(fid)
    return f.forecast(req, seed)


# --- recorded-forecast JSONL ------------------------------------------------------

_RECORD_KEYS = {"window_id", "step", "point", "samples", "deciles"}


def _parse_record(rec: Any, line_no: int) -> tuple[int, ForecastDistribution]:
    where = f"record at line {line_no}"
    if not isinstance(rec, dict):
        raise RecordError(f"{where}: expected a JSON object")
    missing = {"window_id", "step", "point"} - rec.keys()
    extra = rec.keys() - _RECORD_KEYS
    if missing or extra:
        raise RecordError(f"{where}: missing keys {sorted(missing)} / unexpected keys {sorted(extra)}")
    wid, step, point = rec["window_id"], rec["step"], rec["point"]
    if not isinstance(wid, int) or isinstance(wid, bool):
        raise RecordError(f"{where}: window_id must be an integer")
    if not isinstance(step, int) or isinstance(step, bool) or step < 1:
        raise RecordError(f"{where}: step must be a positive integer")
    if not isinstance(point, (int, float)) or isinstance(point, bool):
        raise RecordError(f"{where}: point must be a number")
    samples, deciles = rec.get("samples"), rec.get("deciles")
    for key, val in (("samples", samples), ("deciles", deciles)):
        if val is not None and (
            not isinstance(val, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val)
        ):
            raise RecordError(f"{where}: {key} must be a list of numbers or null")
    if deciles is not None and len(deciles) != 9:
        raise RecordError(f"{where}: deciles must have 9 values, got {len(deciles)}")
    try:
        dist = ForecastDistribution(step=step, point=float(point), samples=samples, deciles=deciles)
    except ForecastError as exc:
        raise RecordError(f"{where} (window {wid}): {exc}") from None
    return wid, dist


def load_external(path) -> dict[int, list[ForecastDistribution]]:
    """Read recorded forecasts (one JSON record per line) keyed by window id."""
    out: dict[int, dict[int, ForecastDistribution]] = {}
    with open(Path(path), encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"record at line {line_no}: invalid JSON ({exc.msg})") from None
            wid, dist = _parse_record(rec, line_no)
            steps = out.setdefault(wid, {})
            if dist.step in steps:
                raise RecordError(
                    f"record at line {line_no}: duplicate (window_id={wid}, step={dist.step})"
                )
            steps[dist.step] = dist
    return {wid: [steps[s] for s in sorted(steps)] for wid, steps in sorted(out.items())}
