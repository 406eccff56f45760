"""Two-model forecast combination: fixed weights and per-step regression stacks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from sklearn.model_selection import TimeSeriesSplit

from .errors import AlignmentError, HybridcastError, RankError

# Fixed-weight schemes evaluated next to the regression stack: (w1, w2).
FIXED_SCHEMES: dict[str, tuple[float, float]] = {
    "avg": (0.5, 0.5),
    "fixed-0.40-0.60": (0.4, 0.6),
    "fixed-0.25-0.75": (0.25, 0.75),
    "fixed-0.75-0.25": (0.75, 0.25),
}

MAX_CONDITION = 1e10


@dataclass(frozen=True)
class StackWeights:
    step: int
    w1: float
    w2: float
    intercept: float = 0.0
    cv_mse: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.w1, self.w2, self.intercept)):
            raise HybridcastError(f"non-finite stack weights at step {self.step}")

    def predict(self, a, b):
        return predict_stack(self, a, b)


@dataclass(frozen=True)
class StackConfig:
    scheme: str = "regression"  # "average", "fixed" or "regression"
    weights: tuple[float, float] | None = None  # for scheme="fixed"
    cv_splits: int = 5
    train_frac: float = 0.80

    def __post_init__(self):
        if self.scheme not in ("average", "fixed", "regression"):
            raise HybridcastError(f"unknown stacking scheme {self.scheme!r}")
        if self.scheme == "fixed":
            if self.weights is None or not all(math.isfinite(w) for w in self.weights):
                raise HybridcastError("fixed scheme needs two finite weights")
        if self.cv_splits < 2:
            raise HybridcastError(f"cv_splits must be >= 2, got {self.cv_splits}")
        if not 0 < self.train_frac <= 1:
            raise HybridcastError(f"train_frac must be in (0, 1], got {self.train_frac}")


def combine_fixed(a, b, w1: float = 0.5, w2: float = 0.5):
    return w1 * a + w2 * b


def predict_stack(weights: StackWeights, a, b):
    return weights.intercept + weights.w1 * a + weights.w2 * b


def _check_design(a: np.ndarray, b: np.ndarray) -> None:
    # Conditioning is judged on the centred, unit-scaled predictors so that the
    # intercept and the predictors' magnitude do not mask collinearity.
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        raise RankError("a predictor is constant, so it is collinear with the intercept")
    Z = np.column_stack([(a - a.mean()) / sa, (b - b.mean()) / sb])
    cond = np.linalg.cond(Z)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise RankError(f"predictors are collinear (condition number {cond:.3g} > {MAX_CONDITION:g})")


def _lstsq(a, b, y) -> np.ndarray:
    X = np.column_stack([np.ones_like(a), a, b])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return beta


def fit_regression_stack(preds_a, preds_b, actuals, cfg: StackConfig = StackConfig(), step: int = 1) -> StackWeights:
    """Least-squares stack ``intercept + w1*a + w2*b``.

    Rows must be in chronological order. The first ``train_frac`` of them form
    the training portion: expanding-window CV fold scores on it are kept as
    diagnostics and the returned weights are refit on the whole portion.
    """
    a, b, y = (np.asarray(v, dtype=float) for v in (preds_a, preds_b, actuals))
    if not (a.shape == b.shape == y.shape) or a.ndim != 1:
        raise AlignmentError(f"length mismatch: {a.shape}, {b.shape}, {y.shape}")
    if len(a) < 10 * cfg.cv_splits:
        raise HybridcastError(f"need >= {10 * cfg.cv_splits} rows for {cfg.cv_splits}-fold CV, got {len(a)}")
    n_train = math.floor(cfg.train_frac * len(a))
    a, b, y = a[:n_train], b[:n_train], y[:n_train]
    _check_design(a, b)

    cv = []
    for tr, te in TimeSeriesSplit(n_splits=cfg.cv_splits).split(a):
        try:
            _check_design(a[tr], b[tr])
        except RankError:
            cv.append(float("nan"))
            continue
        beta = _lstsq(a[tr], b[tr], y[tr])
        resid = y[te] - (beta[0] + beta[1] * a[te] + beta[2] * b[te])
        cv.append(float(np.mean(resid**2)))

    beta = _lstsq(a, b, y)
    return StackWeights(step, float(beta[1]), float(beta[2]), float(beta[0]), tuple(cv))


def _as_frame(t) -> pd.DataFrame:
    if isinstance(t, pd.DataFrame):
        return t
    arr = np.asarray(t, dtype=float)
    return pd.DataFrame(arr, columns=range(1, arr.shape[1] + 1))


def fit_all_steps(pred_table_a, pred_table_b, actual_table, cfg: StackConfig = StackConfig()) -> list[StackWeights]:
    """One regression stack per horizon step.

    Tables are window x step frames (index = window id, columns = step); plain
    2-d arrays are taken as steps 1..H in column order.
    """
    ta, tb, ty = (_as_frame(t) for t in (pred_table_a, pred_table_b, actual_table))
    for name, t in (("B", tb), ("actual", ty)):
        if not ta.index.equals(t.index) or not ta.columns.equals(t.columns):
            raise AlignmentError(f"table {name} is not aligned with table A on (window_id, step)")
    out = []
    for step in ta.columns:
        try:
            out.append(fit_regression_stack(ta[step].to_numpy(), tb[step].to_numpy(), ty[step].to_numpy(), cfg, int(step)))
        except HybridcastError as exc:
            raise type(exc)(f"step {step}: {exc}") from exc
    return out


def weights_to_csv(weights: Mapping[int, Sequence[StackWeights]]) -> str:
    """Export as step,w1,w2,intercept,context_len rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "w1", "w2", "intercept", "context_len"])
    for ctx in sorted(weights):
        for sw in weights[ctx]:
            w.writerow([sw.step, repr(sw.w1), repr(sw.w2), repr(sw.intercept), ctx])
    return buf.getvalue()


def weights_from_csv(text: str) -> dict[int, list[StackWeights]]:
    out: dict[int, list[StackWeights]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        sw = StackWeights(int(row["step"]), float(row["w1"]), float(row["w2"]), float(row.get("intercept") or 0.0))
        out.setdefault(int(row["context_len"]), []).append(sw)
    return out
