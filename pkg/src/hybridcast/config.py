"""Backtest configuration: a flat, serializable document validated with pydantic."""

from __future__ import annotations

import hashlib
import json
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .forecast import ForecasterId

METHODS = (
    "point",
    "point-b",
    "draw",
    "bagged",
    "avg",
    "fixed-weights",
    "regression-stack",
    "residual-adjusted",
)
DEFAULT_METHODS = ("point", "point-b", "bagged", "avg", "fixed-weights", "regression-stack", "residual-adjusted")


class ForecasterSpec(BaseModel):
    """``{kind: ar_ols, p: 24}`` style spec; keys other than ``kind`` are parameters."""

    model_config = ConfigDict(frozen=True)

    kind: str
    params: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="before")
    @classmethod
    def _flatten(cls, data):
        if isinstance(data, str):
            return {"kind": data}
        if isinstance(data, dict) and "params" not in data:
            data = dict(data)
            kind = data.pop("kind", None)
            return {"kind": kind, "params": data}
        return data

    def to_id(self) -> ForecasterId:
        return ForecasterId(self.kind, dict(self.params))

    def dump(self) -> dict[str, Any]:
        return {"kind": self.kind, **self.params}


class BacktestConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    context_lens: tuple[int, ...] = (168, 504, 840)
    horizon: int = Field(24, ge=1, le=24)
    stride: int = Field(1, ge=1)
    methods: tuple[str, ...] = DEFAULT_METHODS
    seed: int = 0
    n_samples: int = Field(100, ge=2)
    bag_subsample: int = Field(40, ge=1)
    bag_repeats: int = Field(100, ge=1)
    bag_steps: int = Field(1, ge=1, le=24)
    forecaster_a: ForecasterSpec = ForecasterSpec(kind="ar_ols", params={"p": 24})
    forecaster_b: ForecasterSpec = ForecasterSpec(kind="exp_smoothing", params={"season": 24})
    residual_model: ForecasterSpec = ForecasterSpec(kind="ar_ols", params={"p": 1})
    cv_splits: int = Field(5, ge=2)
    fixed_weights: tuple[tuple[float, float], ...] = ((0.4, 0.6), (0.25, 0.75), (0.75, 0.25))
    z: float = Field(1.96, gt=0)
    inflation: float = Field(1.0, ge=1.0)
    train_frac: float = Field(0.70, gt=0)
    val_frac: float = Field(0.10, gt=0)
    test_frac: float = Field(0.20, gt=0)
    normalize: Literal["train", "full", "none"] = "train"
    feedback: bool = False
    feedback_max_iters: int = Field(10, ge=1)
    feedback_rel_tol: float = Field(1e-3, gt=0)

    @field_validator("context_lens")
    @classmethod
    def _contexts(cls, v):
        if not v:
            raise ValueError("at least one context length is required")
        if any(c < 1 for c in v):
            raise ValueError("context lengths must be positive")
        return tuple(sorted(set(v)))

    @field_validator("methods")
    @classmethod
    def _methods(cls, v):
        if not v:
            raise ValueError("methods must be non-empty")
        unknown = [m for m in v if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown method(s) {unknown}; expected a subset of {list(METHODS)}")
        return tuple(m for m in METHODS if m in v)

    @model_validator(mode="after")
    def _fractions(self):
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"train_frac + val_frac + test_frac must be 1, got {total!r}")
        return self

    def dump(self) -> dict[str, Any]:
        d = self.model_dump()
        for key in ("forecaster_a", "forecaster_b", "residual_model"):
            d[key] = getattr(self, key).dump()
        d["context_lens"] = list(self.context_lens)
        d["methods"] = list(self.methods)
        d["fixed_weights"] = [list(w) for w in self.fixed_weights]
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.dump(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _loc(err) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def load_config(data: dict[str, Any] | None = None, **overrides) -> BacktestConfig:
    """Build a config from a mapping plus overrides (overrides win); ConfigError names field paths."""
    merged = dict(data or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return BacktestConfig.model_validate(merged)
    except ValidationError as exc:
        msgs = [f"{_loc(e)}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid config: " + "; ".join(msgs)) from None
