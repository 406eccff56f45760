import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridcast.errors import CapabilityError, HybridcastError, InfeasibleError
from hybridcast.forecast import AROLS, ForecasterId, ForecastRequest, SeasonalNaive
from hybridcast.residual import (
    FeedbackConfig,
    ResidualSeries,
    adjust_forecast,
    compute_residuals,
    fit_residual_model,
    iterative_feedback,
    rolling_residual_forecasts,
    run_residual_backtest,
    trace_to_csv,
)
from hybridcast.series import SplitSpec, WindowSpec
from hybridcast.synthetic import synthetic_load

from .conftest import FeedbackProbe, ar1

MEAN_MODEL = ForecasterId("ar_ols", {"p": 0})


def test_compute_residuals():
    y = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(compute_residuals(y, y).errors, 0)
    np.testing.assert_array_equal(compute_residuals(y + 5, y).errors, 5)
    with pytest.raises(HybridcastError):
        compute_residuals(y, y[:2])


@pytest.mark.parametrize("yhat, ehat, want", [(10, 2, 8), (10, 0, 10), (10, -3, 13)])
def test_adjust_forecast(yhat, ehat, want):
    assert adjust_forecast(yhat, ehat) == want


@given(
    st.lists(st.floats(1.0, 1e6), min_size=1, max_size=50),
    st.lists(st.floats(-0.5, 0.5), min_size=50, max_size=50),
)
def test_oracle_residuals_recover_actuals_exactly(actuals, rel_err):
    # forecasts within a factor of two of the actuals make f - y exact
    # (Sterbenz), so subtracting the oracle residual gives y back bit for bit
    y = np.array(actuals)
    f = y * (1 + np.array(rel_err[: len(y)]))
    e = compute_residuals(f, y).errors
    np.testing.assert_array_equal(adjust_forecast(f, e), y)


def test_mean_model_on_constant_residuals():
    model = fit_residual_model(ResidualSeries(np.full(200, 3.5)), MEAN_MODEL, WindowSpec(168))
    assert model.predict_next() == pytest.approx(3.5, abs=1e-12)


def test_ar1_residual_model_recovers_coefficient():
    e = ar1(5000, phi=0.6, seed=9)
    model = fit_residual_model(ResidualSeries(e), ForecasterId("ar_ols", {"p": 1}), WindowSpec(5000))
    h = e.copy()
    h2 = e.copy()
    h2[-1] += 1.0
    slope = model.predict_next(h2) - model.predict_next(h)
    assert abs(slope - 0.6) <= 0.05


def test_short_residual_history_is_infeasible():
    with pytest.raises(InfeasibleError, match="infeasible"):
        fit_residual_model(ResidualSeries(np.zeros(100)), MEAN_MODEL, WindowSpec(168))


def test_rolling_forecasts_use_only_past():
    e = np.arange(10.0)
    out = rolling_residual_forecasts(e, MEAN_MODEL, 3)
    assert np.isnan(out[:3]).all()
    np.testing.assert_allclose(out[3:], [np.mean(e[k - 3 : k]) for k in range(3, 10)])


def test_bias_removed_by_mean_residual_model():
    values = synthetic_load(168 + 168 + 600, seed=4).values
    c = 5.0
    bt = run_residual_backtest(values, WindowSpec(168), AROLS(p=24, bias=c), MEAN_MODEL, residual_context=168)
    assert len(bt.actual) >= 500
    raw = np.mean((bt.yhat - bt.actual) ** 2)
    adj = np.mean((bt.adjusted - bt.actual) ** 2)
    assert adj <= raw - 0.9 * c**2


def test_residual_backtest_infeasible_when_too_short():
    with pytest.raises(InfeasibleError):
        run_residual_backtest(ar1(150), WindowSpec(100), AROLS(p=1), MEAN_MODEL)


# --- iterative feedback -----------------------------------------------------------


def test_feedback_requires_exogenous_capability():
    with pytest.raises(CapabilityError):
        iterative_feedback(ar1(400), SeasonalNaive(), window_spec=WindowSpec(48))


def test_zero_residual_channel_converges_immediately():
    res = iterative_feedback(np.full(600, 3.0), FeedbackProbe(phi=1.0), window_spec=WindowSpec(48))
    assert res.trace == (0.0, 0.0)
    assert res.n_iterations == 2 and res.best_iteration == 0


def test_ar_ols_with_zero_channel_matches_plain_pass():
    # ar_ols ignores an all-zero channel, so feeding zeros is a fixed point
    y = ar1(300, seed=1)
    f = AROLS(p=2)
    plain = f.forecast_arrays(ForecastRequest(y, 1, 10), seed=0)
    fed = f.forecast_arrays(ForecastRequest(y, 1, 10, exogenous=np.zeros(300)), seed=0)
    np.testing.assert_array_equal(plain.points, fed.points)


def test_max_iters_one_gives_two_passes():
    res = iterative_feedback(ar1(600, seed=2), FeedbackProbe(bias=3.0), FeedbackConfig(max_iters=1), WindowSpec(48))
    assert res.n_iterations == 2


def test_bias_feedback_trace_monotone_and_argmin():
    cfg = FeedbackConfig()
    res = iterative_feedback(ar1(1500, phi=0.9, seed=3), FeedbackProbe(phi=0.9, bias=5.0), cfg, WindowSpec(48))
    t = res.trace
    assert len(t) > 2
    assert all(b <= a * (1 + cfg.rel_tol) for a, b in zip(t, t[1:]))
    assert res.best_iteration == int(np.argmin(t))
    assert t[res.best_iteration] < 0.5 * t[0]


def test_feedback_uses_only_train_and_validation():
    y = ar1(1000, seed=5)
    y2 = y.copy()
    _, val_end = SplitSpec().bounds(len(y))
    y2[val_end:] += 1e3
    f = FeedbackProbe(bias=2.0)
    a = iterative_feedback(y, f, window_spec=WindowSpec(48))
    b = iterative_feedback(y2, f, window_spec=WindowSpec(48))
    assert a.trace == b.trace
    assert a.targets.max() < val_end


def test_trace_csv():
    assert trace_to_csv((2.0, 1.5)) == "iteration,validation_rmse\n0,2.0\n1,1.5\n"
