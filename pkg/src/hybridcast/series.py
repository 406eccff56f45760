"""Hourly univariate series: ingest, cleaning, normalization, splitting, windowing."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterator, Sequence

import numpy as np

from .errors import BoundaryError, ParseError, SeriesError

HOUR = np.timedelta64(1, "h")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Hourly series on a regular UTC grid. Missing points are NaN."""

    timestamps: np.ndarray
    values: np.ndarray
    name: str = "series"

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        vals = np.asarray(self.values, dtype=float)
        if ts.ndim != 1 or vals.ndim != 1:
            raise SeriesError("timestamps and values must be one-dimensional")
        if len(ts) != len(vals):
            raise SeriesError(
                f"length mismatch: {len(ts)} timestamps vs {len(vals)} values"
            )
        if len(ts) > 1 and not np.all(np.diff(ts) == HOUR):
            raise SeriesError("timestamps must be strictly increasing at 1-hour spacing")
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "values", _frozen(vals))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.timestamps, values, self.name)

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.timestamps[start:stop], self.values[start:stop], self.name)

    @classmethod
    def from_values(cls, values, start="2021-01-01T00:00:00", name: str = "series") -> "TimeSeries":
        values = np.asarray(values, dtype=float)
        ts = np.datetime64(start, "s") + np.arange(len(values)) * HOUR
        return cls(ts, values, name)


@dataclass(frozen=True)
class NormalizationParams:
    mean: float
    std: float


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.10
    test_frac: float = 0.20

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise SeriesError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise SeriesError(f"split fractions must sum to 1, got {sum(fracs)!r}")

    def bounds(self, n: int) -> tuple[int, int]:
        """Return (train_end, val_end) indices for a series of length n."""
        n_train = math.floor(self.train_frac * n)
        n_val = math.floor(self.val_frac * n)
        return n_train, n_train + n_val


@dataclass(frozen=True)
class WindowSpec:
    context_len: int
    horizon: int = 1
    stride: int = 1

    def __post_init__(self):
        for name in ("context_len", "horizon", "stride"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise SeriesError(f"{name} must be a positive integer, got {v!r}")

    def n_windows(self, n: int) -> int:
        span = self.context_len + self.horizon
        if n < span:
            return 0
        return (n - span) // self.stride + 1


# --- ingest -----------------------------------------------------------------


def _parse_timestamp(text: str, row: int) -> np.datetime64:
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError:
        raise ParseError(f"malformed timestamp {text!r}", row=row) from None
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "s")


def parse_csv(
    data: bytes | str,
    schema: Sequence[str] = ("timestamp", "value"),
    name: str = "series",
) -> TimeSeries:
    """Parse CSV bytes into a TimeSeries on a regular hourly grid.

    Rows may be absent or carry an empty value; both become NaN markers.
    Any other row needs a parseable timestamp and a numeric value. Row
    numbers in errors are 1-based file lines, header included.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    ts_col, val_col = schema
    reader = csv.reader(io.StringIO(data))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty file") from None
    try:
        i_ts, i_val = header.index(ts_col), header.index(val_col)
    except ValueError:
        raise ParseError(f"header must contain {ts_col!r} and {val_col!r}, got {header}", row=1) from None

    stamps, values, rows = [], [], []
    for line_no, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) <= max(i_ts, i_val):
            raise ParseError("too few columns", row=line_no)
        stamp = _parse_timestamp(rec[i_ts], line_no)
        cell = rec[i_val].strip()
        if not cell:
            v = math.nan  # explicit missing marker
        else:
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", row=line_no) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {cell!r}", row=line_no)
        stamps.append(stamp)
        values.append(v)
        rows.append(line_no)
    if not stamps:
        raise ParseError("empty file: no data rows")

    ts = np.array(stamps, dtype="datetime64[s]")
    order = np.argsort(ts, kind="stable")
    ts, vals, rows = ts[order], np.asarray(values)[order], np.asarray(rows)[order]
    dup = np.nonzero(ts[1:] == ts[:-1])[0]
    if len(dup):
        raise ParseError(f"duplicate timestamp {ts[dup[0]]}", row=int(rows[dup[0] + 1]))

    offsets = (ts - ts[0]) / HOUR
    if not np.all(offsets == np.round(offsets)):
        bad = int(np.nonzero(offsets != np.round(offsets))[0][0])
        raise ParseError(f"timestamp {ts[bad]} is off the hourly grid", row=int(rows[bad]))
    n = int(offsets[-1]) + 1
    grid_vals = np.full(n, np.nan)
    grid_vals[offsets.astype(int)] = vals
    grid = ts[0] + np.arange(n) * HOUR
    return TimeSeries(grid, grid_vals, name)


def to_csv(series: TimeSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", "value"])
    for t, v in zip(series.timestamps, series.values):
        w.writerow([f"{np.datetime_as_string(t, unit='s')}Z", "" if np.isnan(v) else repr(float(v))])
    return buf.getvalue()


# --- cleaning / normalization ----------------------------------------------


def interpolate_missing(series: TimeSeries) -> TimeSeries:
    """Fill NaN markers by linear interpolation between observed neighbours."""
    v = series.values
    miss = np.isnan(v)
    if not miss.any():
        return series
    if miss[0] or miss[-1]:
        where = "first" if miss[0] else "last"
        raise BoundaryError(f"cannot interpolate: {where} point of {series.name!r} is missing")
    idx = np.arange(len(v))
    filled = v.copy()
    filled[miss] = np.interp(idx[miss], idx[~miss], v[~miss])
    return series.with_values(filled)


def znormalize(series: TimeSeries, params: NormalizationParams | None = None):
    """Standardize to zero mean and unit sample std.

    When ``params`` is given (e.g. training-split statistics) those are applied
    instead of the series' own.
    """
    if params is None:
        params = fit_normalization(series.values)
    return series.with_values((series.values - params.mean) / params.std), params


def fit_normalization(values) -> NormalizationParams:
    values = np.asarray(values, dtype=float)
    if np.isnan(values).any():
        raise SeriesError("cannot normalize a series with missing values")
    if len(values) < 2:
        raise SeriesError("need at least 2 points to normalize")
    std = float(np.std(values, ddof=1))
    if std == 0.0:
        raise SeriesError("cannot normalize a constant series (std == 0)")
    return NormalizationParams(float(np.mean(values)), std)


def denormalize(series: TimeSeries, params: NormalizationParams) -> TimeSeries:
    return series.with_values(series.values * params.std + params.mean)


# --- splitting / windowing --------------------------------------------------


def chrono_split(series: TimeSeries, spec: SplitSpec = SplitSpec()):
    n = len(series)
    if n < 10:
        raise SeriesError(f"series too short to split: {n} points (need >= 10)")
    a, b = spec.bounds(n)
    if a < 1 or b - a < 1 or n - b < 1:
        raise SeriesError(f"split of {n} points leaves an empty part: {(a, b - a, n - b)}")
    return series.slice(0, a), series.slice(a, b), series.slice(b, n)


def window_iter(series: TimeSeries | np.ndarray, spec: WindowSpec) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (context, target) views for each sliding window.

    Window k has context ``[k*stride, k*stride + context_len)`` followed by
    ``horizon`` target points.
    """
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    n_win = spec.n_windows(len(values))
    if n_win == 0:
        raise SeriesError(
            f"series of length {len(values)} is shorter than one window "
            f"({spec.context_len} + {spec.horizon})"
        )
    L, H = spec.context_len, spec.horizon
    for k in range(n_win):
        s = k * spec.stride
        yield values[s : s + L], values[s + L : s + L + H]
