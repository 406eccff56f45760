"""Seeded synthetic load series: AR(1) noise on top of a daily sinusoid."""

from __future__ import annotations

import numpy as np

from .series import TimeSeries


def synthetic_load(
    length: int = 5000,
    seed: int = 0,
    level: float = 1000.0,
    daily_amplitude: float = 150.0,
    phi: float = 0.9,
    noise_sigma: float = 10.0,
    start: str = "2021-01-01T00:00:00",
    name: str = "synthetic",
) -> TimeSeries:
    """Hourly series ``level + A*sin(2*pi*t/24) + u_t`` with ``u_t = phi*u_{t-1} + eps_t``.

    The AR state starts from its stationary distribution so there is no burn-in.
    """
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, noise_sigma, size=length)
    u = np.empty(length)
    u[0] = eps[0] / np.sqrt(1.0 - phi**2) if abs(phi) < 1 else eps[0]
    for t in range(1, length):
        u[t] = phi * u[t - 1] + eps[t]
    t = np.arange(length)
    values = level + daily_amplitude * np.sin(2 * np.pi * t / 24.0) + u
    return TimeSeries.from_values(values, start=start, name=name)
