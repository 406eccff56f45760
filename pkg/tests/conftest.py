from pathlib import Path

import numpy as np
import pytest

from hybridcast.forecast import Forecaster
from hybridcast.series import TimeSeries

FIXTURES = Path(__file__).parent / "fixtures"

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


class AcceptanceLog:
    """Records one verdict per criterion; printed in the terminal summary."""

    def check(self, number: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (bool(ok), detail)
        assert ok, f"criterion {number} failed: {detail}"


@pytest.fixture
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def ar1(n, phi=0.8, sigma=1.0, seed=0):
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, sigma, n)
    y = np.empty(n)
    y[0] = e[0] / np.sqrt(1 - phi**2)
    for t in range(1, n):
        y[t] = phi * y[t - 1] + e[t]
    return y


def series_of(values, name="t"):
    return TimeSeries.from_values(values, name=name)


class FeedbackProbe(Forecaster):
    """Noise-free ``phi * y[-1] + bias`` that learns from a residual channel.

    With an exogenous channel ``x`` (previous pass residuals, NaN where absent)
    the previous pass's correction at t is ``base_t - (y_t + x_t)``; the new
    correction moves ``lam`` of the way along the mean remaining residual, so
    a constant bias decays geometrically across feedback passes.
    """

    kind = "feedback_probe"
    accepts_exogenous = True

    def __init__(self, phi=0.9, bias=0.0, lam=0.5):
        super().__init__(sigma=0.0)
        self.phi, self.offset, self.lam = phi, bias, lam

    def mean_and_sigma(self, context, horizon, exogenous=None):
        base = self.phi * context[:-1] + self.offset  # forecast of context[1:]
        corr = 0.0
        if exogenous is not None:
            x = exogenous[1:]
            ok = np.isfinite(x)
            if ok.any():
                prev_forecast = context[1:][ok] + x[ok]
                corr = float(np.mean(base[ok] - prev_forecast + self.lam * x[ok]))
        mean = self.phi * context[-1] + self.offset - corr
        return np.full(horizon, mean), np.zeros(horizon)
