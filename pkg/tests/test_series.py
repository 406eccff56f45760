import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridcast.errors import BoundaryError, ParseError, SeriesError
from hybridcast.series import (
    NormalizationParams,
    SplitSpec,
    TimeSeries,
    WindowSpec,
    chrono_split,
    denormalize,
    interpolate_missing,
    parse_csv,
    to_csv,
    window_iter,
    znormalize,
)

from .conftest import series_of

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


# --- parse_csv -------------------------------------------------------------------


def test_parse_three_rows():
    s = parse_csv(b"timestamp,value\n2024-01-01T00:00:00Z,1\n2024-01-01T01:00:00Z,2\n2024-01-01T02:00:00Z,3\n")
    assert len(s) == 3
    assert s.n_missing == 0
    np.testing.assert_array_equal(s.values, [1, 2, 3])


def test_parse_gap_becomes_missing_marker():
    s = parse_csv("timestamp,value\n2024-01-01T00:00:00,1\n2024-01-01T02:00:00,3\n")
    assert len(s) == 3
    assert s.missing.tolist() == [False, True, False]
    assert s.timestamps[1] == np.datetime64("2024-01-01T01:00:00")


def test_parse_bad_timestamp_names_row():
    with pytest.raises(ParseError, match="row 3"):
        parse_csv("timestamp,value\n2024-01-01T00:00:00,1\nnot-a-date,2\n")


@pytest.mark.parametrize(
    "body, needle",
    [
        ("", "empty"),
        ("timestamp,value\n", "empty"),
        ("timestamp,value\n2024-01-01T00:00:00,abc\n", "row 2"),
        ("timestamp,value\n2024-01-01T00:00:00,1\n2024-01-01T00:00:00,2\n", "duplicate"),
        ("timestamp,value\n2024-01-01T00:00:00,1\n2024-01-01T00:30:00,2\n", "off the hourly grid"),
        ("time,load\n2024-01-01T00:00:00,1\n", "header"),
    ],
)
def test_parse_errors(body, needle):
    with pytest.raises(ParseError, match=needle):
        parse_csv(body)


def test_parse_converts_offsets_to_utc_and_sorts():
    s = parse_csv("timestamp,value\n2024-01-01T03:00:00+02:00,2\n2024-01-01T00:00:00Z,1\n")
    assert s.timestamps[0] == np.datetime64("2024-01-01T00:00:00")
    assert s.values[0] == 1 and s.values[1] == 2


def test_csv_round_trip():
    s = TimeSeries.from_values([1.5, np.nan, 3.25], start="2024-03-01T05:00:00")
    back = parse_csv(to_csv(s))
    np.testing.assert_array_equal(back.timestamps, s.timestamps)
    np.testing.assert_array_equal(back.values, s.values)


def test_timeseries_rejects_irregular_spacing():
    ts = np.array(["2024-01-01T00", "2024-01-01T02"], dtype="datetime64[s]")
    with pytest.raises(SeriesError):
        TimeSeries(ts, [1.0, 2.0])


# --- interpolation ------------------------------------------------------------------


@pytest.mark.parametrize(
    "vals, want",
    [([1, np.nan, 3], [1, 2, 3]), ([1, np.nan, np.nan, 4], [1, 2, 3, 4])],
)
def test_interpolate(vals, want):
    np.testing.assert_allclose(interpolate_missing(series_of(vals)).values, want)


@pytest.mark.parametrize("vals", [[np.nan, 2, 3], [1, 2, np.nan]])
def test_interpolate_boundary_error(vals):
    with pytest.raises(BoundaryError):
        interpolate_missing(series_of(vals))


@given(
    slope=st.floats(-100, 100),
    intercept=st.floats(-1e3, 1e3),
    n=st.integers(3, 60),
    data=st.data(),
)
def test_interpolation_exact_on_affine(slope, intercept, n, data):
    t = np.arange(n, dtype=float)
    line = intercept + slope * t
    holes = data.draw(st.sets(st.integers(1, n - 2), max_size=n - 2))
    vals = line.copy()
    vals[list(holes)] = np.nan
    filled = interpolate_missing(series_of(vals)).values
    np.testing.assert_allclose(filled, line, atol=1e-12 * max(1.0, np.abs(line).max()))


# --- normalization ------------------------------------------------------------------


def test_znormalize_fixture():
    z, params = znormalize(series_of([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(z.values, [-1, 0, 1])
    assert params == NormalizationParams(2.0, 1.0)


def test_znormalize_constant_is_error():
    with pytest.raises(SeriesError):
        znormalize(series_of([5.0, 5.0, 5.0]))


def test_denormalize_fixtures():
    np.testing.assert_allclose(denormalize(series_of([-1.0, 0, 1]), NormalizationParams(2, 1)).values, [1, 2, 3])
    np.testing.assert_allclose(denormalize(series_of([0.0]), NormalizationParams(7, 3)).values, [7])


@given(st.lists(finite, min_size=2, max_size=50).filter(lambda v: np.std(v) > 1e-3))
def test_normalize_round_trip(vals):
    s = series_of(vals)
    z, params = znormalize(s)
    back = denormalize(z, params).values
    np.testing.assert_allclose(back, vals, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(vals).max()))


def test_znormalize_with_given_params():
    z, params = znormalize(series_of([10.0, 20.0]), NormalizationParams(0.0, 10.0))
    np.testing.assert_allclose(z.values, [1, 2])
    assert params.std == 10.0


# --- split / windows ------------------------------------------------------------------


@pytest.mark.parametrize("n, lengths", [(100, (70, 10, 20)), (101, (70, 10, 21))])
def test_chrono_split_lengths(n, lengths):
    parts = chrono_split(series_of(np.arange(n, dtype=float)))
    assert tuple(len(p) for p in parts) == lengths


def test_chrono_split_too_short():
    with pytest.raises(SeriesError):
        chrono_split(series_of(np.arange(5, dtype=float)))


@given(st.integers(10, 2000))
def test_chrono_split_concatenates(n):
    s = series_of(np.arange(n, dtype=float))
    parts = chrono_split(s)
    np.testing.assert_array_equal(np.concatenate([p.values for p in parts]), s.values)
    np.testing.assert_array_equal(np.concatenate([p.timestamps for p in parts]), s.timestamps)


def test_split_spec_must_sum_to_one():
    with pytest.raises(SeriesError):
        SplitSpec(0.7, 0.2, 0.2)


def _brute_windows(n, L, H, stride):
    out, s = [], 0
    while s + L + H <= n:
        out.append((list(range(s, s + L)), list(range(s + L, s + L + H))))
        s += stride
    return out


@pytest.mark.parametrize("n, L, H, want", [(10, 3, 2, 6), (5, 3, 2, 1)])
def test_window_counts(n, L, H, want):
    assert len(list(window_iter(series_of(np.arange(n, dtype=float)), WindowSpec(L, H)))) == want


def test_window_too_short():
    with pytest.raises(SeriesError):
        list(window_iter(series_of(np.arange(4, dtype=float)), WindowSpec(3, 2)))


@settings(max_examples=60)
@given(n=st.integers(2, 80), L=st.integers(1, 20), H=st.integers(1, 5), stride=st.integers(1, 5))
def test_windows_match_index_enumeration(n, L, H, stride):
    vals = np.arange(n, dtype=float)
    want = _brute_windows(n, L, H, stride)
    spec = WindowSpec(L, H, stride)
    if not want:
        with pytest.raises(SeriesError):
            list(window_iter(vals, spec))
        return
    got = [(c.tolist(), t.tolist()) for c, t in window_iter(vals, spec)]
    assert got == [([float(i) for i in c], [float(i) for i in t]) for c, t in want]
    starts = [c[0] for c, _ in got]
    assert all(b - a == stride for a, b in zip(starts, starts[1:]))
