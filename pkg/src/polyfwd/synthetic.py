"""Synthetic nearby-forward quote series for testing the filter and calibrator."""

from __future__ import annotations

import datetime as dt

import numpy as np

from .io import year_times
from .model import MarketPriceOfRisk, TwoFactorParams, basis_eval
from .qkf import MeasurementMaps, QuoteSeries, discretize, noise_levels

__all__ = ["monthly_dates", "synthetic_quotes"]


def monthly_dates(start: dt.date, n: int) -> list[dt.date]:
    out = []
    y, m = start.year, start.month
    for _ in range(n):
        out.append(dt.date(y, m, min(start.day, 28)))
        m += 1
        if m > 12:
            y, m = y + 1, 1
    return out


def synthetic_quotes(params: TwoFactorParams, mpr: MarketPriceOfRisk | None, n_dates: int = 100,
                     n_contracts: int = 10, spread: float = 1.0, spread_dispersion: float = 0.3,
                     gap_prob: float = 0.0, seed: int = 0, noiseless: bool = False,
                     start: dt.date = dt.date(2000, 1, 1)) -> tuple[QuoteSeries, np.ndarray]:
    """Simulate monthly quotes from the discretised real-world dynamics.

    Spreads are lognormal around ``spread`` (growing mildly with maturity) and
    the quote noise has the standard deviation the filter's noise model
    assigns to those spreads. Returns the series and the true states ``(K, 2)``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5157]))
    dates = monthly_dates(start, n_dates)
    times, fracs = year_times(dates)
    x = np.array([params.z0, params.y0])
    states = np.empty((n_dates, 2))
    for k in range(n_dates):
        if k > 0:
            d = discretize(params, mpr, times[k] - times[k - 1])
            x = d.b + d.D @ x + d.K @ rng.standard_normal(2)
        states[k] = x

    base = spread * (1.0 + 0.05 * np.arange(n_contracts))
    spreads = base[None, :] * np.exp(spread_dispersion * rng.standard_normal((n_dates, n_contracts))
                                     - 0.5 * spread_dispersion**2)
    present = rng.random((n_dates, n_contracts)) >= gap_prob
    present[:, 0] = True
    maps = MeasurementMaps(params, n_contracts)
    clean = np.array([maps.full(fracs[k]) @ basis_eval(params, states[k]) for k in range(n_dates)])
    prices = np.where(present, clean, np.nan)
    spreads = np.where(present, spreads, np.nan)
    draft = QuoteSeries(times, fracs, prices, spreads, tuple(d.isoformat() for d in dates))
    if not noiseless:
        N = noise_levels(draft)
        eps = rng.standard_normal((n_dates, n_contracts))
        noisy = prices + np.nan_to_num(N) * eps
        prices = np.where(present, np.maximum(noisy, 1e-6), np.nan)
    return QuoteSeries(times, fracs, prices, spreads, draft.labels), states
