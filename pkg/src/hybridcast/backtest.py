"""Sliding-window backtest over train/validation/test portions, with reports.

Every window gets a forecast from model A (sample-based) and model B
(decile-based); the combination methods are evaluated per horizon step on
windows whose target falls in the test portion. Stacks are fitted on
training-portion targets and raw validation-portion intervals are kept for
inflation calibration.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import __version__
from .bagging import BaggingConfig, bag_steps
from .config import BacktestConfig
from .errors import HybridcastError, InfeasibleError
from .forecast import Forecaster, ForecasterId, ForecastRequest, build_forecaster
from .intervals import IntervalConfig, interval_bounds, sigma_from_deciles
from .residual import FeedbackConfig, iterative_feedback, rolling_residual_forecasts
from .series import NormalizationParams, SplitSpec, TimeSeries, WindowSpec, fit_normalization
from .stacking import StackConfig, StackWeights, fit_regression_stack, weights_to_csv

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("method", "context_hours", "step", "mse", "rmse", "coverage", "mean_width")
INTERVAL_COLUMNS = ("window_id", "step", "mean", "lower", "upper", "actual", "covered")
GAP = "--"

REPORT_JSON_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["metadata", "rows", "gaps"],
    "additionalProperties": False,
    "properties": {
        "metadata": {
            "type": "object",
            "required": ["seed", "config_hash", "series", "version"],
            "properties": {
                "seed": {"type": "integer"},
                "config_hash": {"type": "string"},
                "series": {"type": "string"},
                "version": {"type": "string"},
            },
        },
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(REPORT_COLUMNS),
                "additionalProperties": False,
                "properties": {
                    "method": {"type": "string"},
                    "context_hours": {"type": "integer", "minimum": 1},
                    "step": {"type": "integer", "minimum": 1, "maximum": 24},
                    "mse": {"type": ["number", "null"], "minimum": 0},
                    "rmse": {"type": ["number", "null"], "minimum": 0},
                    "coverage": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                    "mean_width": {"type": ["number", "null"], "minimum": 0},
                },
            },
        },
        "gaps": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["method", "context_hours", "reason"],
                "properties": {
                    "method": {"type": "string"},
                    "context_hours": {"type": "integer"},
                    "reason": {"type": "string"},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class ReportRow:
    method: str
    context_hours: int
    step: int
    mse: float | None
    rmse: float | None
    coverage: float | None = None
    mean_width: float | None = None

    @property
    def is_gap(self) -> bool:
        return self.mse is None


@dataclass(frozen=True)
class Gap:
    method: str
    context_hours: int
    reason: str


@dataclass
class BacktestReport:
    rows: list[ReportRow]
    gaps: list[Gap]
    metadata: dict[str, Any]
    weights: dict[int, list[StackWeights]] = field(default_factory=dict)
    # (context, step) -> training MSE of A, B and the refit stack
    train_mse: dict[tuple[int, int], dict[str, float]] = field(default_factory=dict)
    test_intervals: dict[int, pd.DataFrame] = field(default_factory=dict)
    validation_intervals: dict[int, pd.DataFrame] = field(default_factory=dict)
    timestamps: np.ndarray | None = None
    feedback_traces: dict[int, tuple[float, ...]] = field(default_factory=dict)

    def get(self, method: str, context: int, step: int) -> ReportRow:
        for r in self.rows:
            if (r.method, r.context_hours, r.step) == (method, context, step):
                return r
        raise KeyError((method, context, step))

    def mse_table(self, context: int) -> pd.DataFrame:
        rows = [r for r in self.rows if r.context_hours == context and not r.is_gap]
        df = pd.DataFrame([(r.step, r.method, r.mse) for r in rows], columns=["step", "method", "mse"])
        return df.pivot(index="step", columns="method", values="mse")


# --- metrics -----------------------------------------------------------------


def mse(pred, actual) -> float:
    p, y = np.asarray(pred, dtype=float), np.asarray(actual, dtype=float)
    if p.shape != y.shape:
        raise HybridcastError(f"length mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise HybridcastError("mse of an empty sequence is undefined")
    return float(np.mean((p - y) ** 2))


def rmse(pred, actual) -> float:
    return math.sqrt(mse(pred, actual))


# --- window evaluation ---------------------------------------------------------


def _sigma(fa) -> np.ndarray:
    if fa.samples is not None and fa.samples.shape[1] >= 2:
        return fa.samples.std(axis=1, ddof=1)
    if fa.deciles is not None:
        return sigma_from_deciles(fa.deciles[:, 0], fa.deciles[:, 8])
    return np.zeros(len(fa.points))


def _eval_chunk(args) -> dict[str, np.ndarray]:
    values, L, H, stride, ks, spec_a, spec_b, n_samples, seed, bag = args
    fa_ = spec_a if isinstance(spec_a, Forecaster) else build_forecaster(spec_a)
    fb_ = spec_b if isinstance(spec_b, Forecaster) else build_forecaster(spec_b)
    n = len(ks)
    out = {k: np.full((n, H), np.nan) for k in ("a_point", "a_sigma", "a_draw", "b_point", "b_sigma")}
    bag_h, bag_cfg = bag if bag is not None else (0, None)
    out["a_bag"] = np.full((n, bag_h), np.nan)
    for i, k in enumerate(ks):
        s = k * stride
        ctx = values[s : s + L]
        fa = fa_.forecast_arrays(ForecastRequest(ctx, H, n_samples, window_id=int(k)), seed=[seed, L, int(k)])
        fb = fb_.forecast_arrays(ForecastRequest(ctx, H, n_samples, window_id=int(k)), seed=[seed, L, int(k), 1])
        out["a_point"][i] = fa.points
        out["a_sigma"][i] = _sigma(fa)
        out["b_point"][i] = fb.points
        out["b_sigma"][i] = _sigma(fb)
        if fa.samples is not None:
            out["a_draw"][i] = fa.samples[:, 0]
            if bag_cfg is not None:
                out["a_bag"][i] = bag_steps(fa.samples[:bag_h], bag_cfg, bag_cfg.seed + int(k))
    return out


def evaluate_windows(values, L, H, stride, spec_a, spec_b, n_samples, seed, bag=None, workers=1):
    """Forecast every window; returns per-window arrays in window order.

    Per-window seeding makes the result independent of ``workers``.
    """
    n_win = WindowSpec(L, H, stride).n_windows(len(values))
    ks = np.arange(n_win)
    if workers <= 1 or n_win < 2 * workers:
        chunks = [ks]
    else:
        chunks = [c for c in np.array_split(ks, workers * 4) if len(c)]
    tasks = [(values, L, H, stride, c, spec_a, spec_b, n_samples, seed, bag) for c in chunks]
    if len(tasks) == 1:
        parts = [_eval_chunk(tasks[0])]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_eval_chunk, tasks))
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


# --- harness -----------------------------------------------------------------------


def _fixed_label(w) -> str:
    return f"fixed-{w[0]:.2f}-{w[1]:.2f}"


def _method_labels(cfg: BacktestConfig) -> list[str]:
    out = []
    for m in cfg.methods:
        if m == "fixed-weights":
            out += [_fixed_label(w) for w in cfg.fixed_weights]
        else:
            out.append(m)
    return out


def _steps_for(method: str, cfg: BacktestConfig) -> range:
    if method == "residual-adjusted":
        return range(1, 2)
    if method == "bagged":
        return range(1, min(cfg.bag_steps, cfg.horizon) + 1)
    return range(1, cfg.horizon + 1)


def _row(method, ctx, step, pred, actual, lo=None, hi=None) -> ReportRow:
    m = mse(pred, actual)
    cov = width = None
    if lo is not None:
        cov = float(np.mean((lo <= actual) & (actual <= hi)))
        width = float(np.mean(hi - lo))
    return ReportRow(method, ctx, step, m, math.sqrt(m), cov, width)


def _interval_frame(windows, step, mu, lo, hi, y) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "window_id": windows,
            "step": step,
            "mean": mu,
            "lower": lo,
            "upper": hi,
            "actual": y,
            "covered": ((lo <= y) & (y <= hi)).astype(int),
        }
    )


def run_backtest(
    series: TimeSeries,
    cfg: BacktestConfig = BacktestConfig(),
    forecaster_a: ForecasterId | Forecaster | None = None,
    forecaster_b: ForecasterId | Forecaster | None = None,
    workers: int = 1,
) -> BacktestReport:
    if series.n_missing:
        raise HybridcastError(f"series {series.name!r} has {series.n_missing} missing values; interpolate first")
    spec_a = forecaster_a or cfg.forecaster_a.to_id()
    spec_b = forecaster_b or cfg.forecaster_b.to_id()
    # Build once up front so bad parameters fail before any work starts.
    fa_probe = spec_a if isinstance(spec_a, Forecaster) else build_forecaster(spec_a)
    if not isinstance(spec_b, Forecaster):
        build_forecaster(spec_b)

    values = series.values
    N = len(values)
    split = SplitSpec(cfg.train_frac, cfg.val_frac, cfg.test_frac)
    train_end, val_end = split.bounds(N)
    if cfg.normalize == "none":
        norm = NormalizationParams(0.0, 1.0)
    else:
        norm = fit_normalization(values[:train_end] if cfg.normalize == "train" else values)
    z = (values - norm.mean) / norm.std

    H, stride = cfg.horizon, cfg.stride
    labels = _method_labels(cfg)
    bag_cfg = BaggingConfig(cfg.n_samples, cfg.bag_subsample, cfg.bag_repeats, cfg.seed)
    bag = (min(cfg.bag_steps, H), bag_cfg) if "bagged" in cfg.methods else None
    report = BacktestReport(
        rows=[],
        gaps=[],
        metadata={
            "seed": cfg.seed,
            "config_hash": cfg.config_hash(),
            "series": series.name,
            "version": __version__,
            "stride": stride,
        },
        timestamps=series.timestamps,
    )
    icfg = IntervalConfig(cfg.z, cfg.inflation)
    raw_icfg = IntervalConfig(cfg.z, 1.0)

    for L in cfg.context_lens:
        n_win = WindowSpec(L, H, stride).n_windows(N)
        ks = np.arange(n_win)
        tgt = ks[:, None] * stride + L + np.arange(H)[None, :]
        if n_win == 0 or not (tgt >= val_end).any() or not (tgt < train_end).any():
            reason = f"insufficient data for a {L}-hour context with horizon {H} ({N} points)"
            log.warning(reason)
            report.gaps += [Gap(m, L, reason) for m in labels]
            report.rows += [ReportRow(m, L, s, None, None) for m in labels for s in _steps_for(m, cfg)]
            continue
        log.info("context %dh: %d windows", L, n_win)
        w = evaluate_windows(z, L, H, stride, spec_a, spec_b, cfg.n_samples, cfg.seed, bag, workers)
        a_pt = w["a_point"] * norm.std + norm.mean
        b_pt = w["b_point"] * norm.std + norm.mean
        a_sd = w["a_sigma"] * norm.std
        b_sd = w["b_sigma"] * norm.std
        actual = values[tgt]
        is_train = tgt < train_end
        is_val = (tgt >= train_end) & (tgt < val_end)
        is_test = tgt >= val_end

        gap_reasons: dict[str, str] = {}
        stacks: list[StackWeights] = []
        rows: dict[str, list[ReportRow]] = {m: [] for m in labels}
        test_frames, val_frames = [], []

        if fa_probe.output != "samples" and any(m in labels for m in ("bagged", "draw")):
            for m in ("bagged", "draw"):
                if m in labels:
                    gap_reasons[m] = f"forecaster {fa_probe.kind!r} produces no sample draws"

        for h in range(H):
            step = h + 1
            te, tr, va = is_test[:, h], is_train[:, h], is_val[:, h]
            y = actual[te, h]
            if not te.any():
                continue
            if "point" in rows:
                rows["point"].append(_row("point", L, step, a_pt[te, h], y))
            if "point-b" in rows:
                rows["point-b"].append(_row("point-b", L, step, b_pt[te, h], y))
            if "draw" in rows and "draw" not in gap_reasons:
                draw = w["a_draw"][:, h] * norm.std + norm.mean
                rows["draw"].append(_row("draw", L, step, draw[te], y))
            if "bagged" in rows and "bagged" not in gap_reasons and h < w["a_bag"].shape[1]:
                bagged = w["a_bag"][:, h] * norm.std + norm.mean
                rows["bagged"].append(_row("bagged", L, step, bagged[te], y))

            combos = []
            if "avg" in rows:
                combos.append(("avg", StackWeights(step, 0.5, 0.5)))
            for wt in cfg.fixed_weights:
                if _fixed_label(wt) in rows:
                    combos.append((_fixed_label(wt), StackWeights(step, wt[0], wt[1])))
            if "regression-stack" in rows and "regression-stack" not in gap_reasons:
                try:
                    sw = fit_regression_stack(
                        a_pt[tr, h], b_pt[tr, h], actual[tr, h], StackConfig(cv_splits=cfg.cv_splits, train_frac=1.0), step
                    )
                except HybridcastError as exc:
                    gap_reasons["regression-stack"] = f"step {step}: {exc}"
                else:
                    stacks.append(sw)
                    report.train_mse[(L, step)] = {
                        "a": mse(a_pt[tr, h], actual[tr, h]),
                        "b": mse(b_pt[tr, h], actual[tr, h]),
                        "regression-stack": mse(sw.predict(a_pt[tr, h], b_pt[tr, h]), actual[tr, h]),
                    }
                    combos.append(("regression-stack", sw))

            for label, sw in combos:
                mu = sw.predict(a_pt[:, h], b_pt[:, h])
                sig = np.sqrt(sw.w1**2 * a_sd[:, h] ** 2 + sw.w2**2 * b_sd[:, h] ** 2)
                lo, hi = interval_bounds(mu[te], sig[te], icfg)
                rows[label].append(_row(label, L, step, mu[te], y, lo, hi))
                if label == "regression-stack":
                    test_frames.append(_interval_frame(ks[te], step, mu[te], lo, hi, y))
                    if va.any():
                        vlo, vhi = interval_bounds(mu[va], sig[va], raw_icfg)
                        val_frames.append(_interval_frame(ks[va], step, mu[va], vlo, vhi, actual[va, h]))

        if "residual-adjusted" in rows:
            try:
                rows["residual-adjusted"].append(_residual_row(cfg, L, ks, a_pt[:, 0], actual[:, 0], is_test[:, 0]))
            except HybridcastError as exc:
                gap_reasons["residual-adjusted"] = str(exc)

        for label in labels:
            if label in gap_reasons:
                log.warning("context %dh, %s: %s", L, label, gap_reasons[label])
                report.gaps.append(Gap(label, L, gap_reasons[label]))
                rows[label] = [ReportRow(label, L, s, None, None) for s in _steps_for(label, cfg)]
            report.rows += rows[label]
        if stacks and "regression-stack" not in gap_reasons:
            report.weights[L] = stacks
            report.test_intervals[L] = pd.concat(test_frames, ignore_index=True)
            if val_frames:
                report.validation_intervals[L] = pd.concat(val_frames, ignore_index=True)

        if cfg.feedback:
            try:
                res = iterative_feedback(
                    z,
                    spec_a if isinstance(spec_a, Forecaster) else build_forecaster(spec_a),
                    FeedbackConfig(cfg.feedback_max_iters, cfg.feedback_rel_tol),
                    WindowSpec(L, 1, stride),
                    split,
                    cfg.n_samples,
                    cfg.seed,
                )
                report.feedback_traces[L] = tuple(r * norm.std for r in res.trace)
            except HybridcastError as exc:
                report.gaps.append(Gap("feedback", L, str(exc)))
    return report


def _residual_row(cfg: BacktestConfig, L, ks, yhat, y, test_mask) -> ReportRow:
    """Step-1 residual correction: model the error series over the trailing L windows."""
    errors = yhat - y
    test_ks = ks[test_mask]
    first = int(test_ks[0])
    if first < L:
        raise InfeasibleError(
            f"residual modelling infeasible: first test window has {first} residuals of history, "
            f"{L} needed"
        )
    # only the residual history up to the last test window is needed
    lo = first - L
    ehat = rolling_residual_forecasts(errors[lo : int(test_ks[-1]) + 1], cfg.residual_model.to_id(), L)
    ehat = ehat[test_ks - lo]
    return _row("residual-adjusted", L, 1, yhat[test_mask] - ehat, y[test_mask])


# --- serialization ---------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report: BacktestReport, fmt: str = "csv") -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(REPORT_COLUMNS)
        for r in report.rows:
            if r.is_gap:
                wr.writerow([r.method, r.context_hours, r.step, GAP, GAP, "", ""])
            else:
                wr.writerow([r.method, r.context_hours, r.step, _fmt(r.mse), _fmt(r.rmse), _fmt(r.coverage), _fmt(r.mean_width)])
        return buf.getvalue().encode()
    if fmt == "json":
        doc = {
            "metadata": {k: report.metadata[k] for k in ("seed", "config_hash", "series", "version")},
            "rows": [{c: getattr(r, c) for c in REPORT_COLUMNS} for r in report.rows],
            "gaps": [{"method": g.method, "context_hours": g.context_hours, "reason": g.reason} for g in report.gaps],
        }
        return (json.dumps(doc, indent=2) + "\n").encode()
    raise HybridcastError(f"unknown report format {fmt!r}; expected 'csv' or 'json'")


def _num(s: str) -> float | None:
    return None if s in ("", GAP) else float(s)


def read_report_csv(data: bytes | str) -> list[ReportRow]:
    text = data.decode() if isinstance(data, bytes) else data
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
        raise HybridcastError(f"unexpected report columns {reader.fieldnames}")
    return [
        ReportRow(
            row["method"], int(row["context_hours"]), int(row["step"]),
            _num(row["mse"]), _num(row["rmse"]), _num(row["coverage"]), _num(row["mean_width"]),
        )
        for row in reader
    ]


def read_report_json(data: bytes | str) -> BacktestReport:
    doc = json.loads(data)
    rows = [ReportRow(**{c: r[c] for c in REPORT_COLUMNS}) for r in doc["rows"]]
    gaps = [Gap(**g) for g in doc["gaps"]]
    return BacktestReport(rows, gaps, doc["metadata"])


def intervals_to_csv(df: pd.DataFrame) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(INTERVAL_COLUMNS)
    for rec in df.itertuples(index=False):
        wr.writerow([int(rec.window_id), int(rec.step), repr(float(rec.mean)), repr(float(rec.lower)),
                     repr(float(rec.upper)), repr(float(rec.actual)), int(rec.covered)])
    return buf.getvalue()


def emit_plots(report: BacktestReport, out_dir) -> list[Path]:
    """Write plot-ready data: per-context step/method/MSE tables and step-1 PI bands."""
    if not report.rows:
        raise HybridcastError("report has no rows to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    contexts = sorted({r.context_hours for r in report.rows})
    order = {m: i for i, m in enumerate(dict.fromkeys(r.method for r in report.rows))}
    for ctx in contexts:
        rows = sorted(
            (r for r in report.rows if r.context_hours == ctx and not r.is_gap),
            key=lambda r: (r.step, order[r.method]),
        )
        path = out / f"plot_mse_{ctx}h.csv"
        lines = ["step,method,mse"] + [f"{r.step},{r.method},{r.mse!r}" for r in rows]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    for ctx, df in sorted(report.test_intervals.items()):
        band = df[df["step"] == 1]
        path = out / f"plot_pi_{ctx}h.csv"
        lines = ["timestamp,mean,lower,upper,actual"]
        for rec in band.itertuples(index=False):
            ts = _target_timestamp(report, ctx, int(rec.window_id))
            lines.append(f"{ts},{rec.mean!r},{rec.lower!r},{rec.upper!r},{rec.actual!r}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written


def _target_timestamp(report: BacktestReport, ctx: int, window_id: int) -> str:
    stride = int(report.metadata.get("stride", 1))
    i = window_id * stride + ctx
    if report.timestamps is None or i >= len(report.timestamps):
        return str(i)
    return f"{np.datetime_as_string(report.timestamps[i], unit='s')}Z"
