"""Synthetic price files in the ``date,value`` schema."""

from __future__ import annotations

import numpy as np

from .._rng import rng_from

__all__ = ["stochastic_vol_prices", "geometric_random_walk", "business_days", "write_price_csv"]


def business_days(n, start="2000-01-03"):
    """``n`` consecutive weekdays as ISO strings."""
    days = np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")
    return [str(d) for d in days]


def stochastic_vol_prices(n_rows=2048, seed=0, start_price=100.0, mean_log_var=-9.0, persistence=0.97, vol_of_vol=0.25):
    """Prices whose daily log-returns are ``exp(h_t / 2) z_t`` with AR(1) log-variance ``h_t``.

    The persistent log-variance produces volatility clustering (positive
    autocorrelation of squared returns) and heavy-tailed marginals.
    """
    rng = rng_from(seed, "data")
    n = n_rows - 1
    h = np.empty(n)
    sd = vol_of_vol / np.sqrt(1.0 - persistence**2)
    h[0] = mean_log_var + sd * rng.standard_normal()
    shocks = rng.standard_normal(n)
    for t in range(1, n):
        h[t] = mean_log_var + persistence * (h[t - 1] - mean_log_var) + vol_of_vol * shocks[t]
    returns = np.exp(h / 2) * rng.standard_normal(n)
    return start_price * np.exp(np.concatenate([[0.0], np.cumsum(returns)]))


def geometric_random_walk(n_rows=4096, seed=0, start_price=100.0, vol=0.01):
    rng = rng_from(seed, "data")
    steps = vol * rng.standard_normal(n_rows - 1)
    return start_price * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))


def write_price_csv(path, prices, start="2000-01-03"):
    dates = business_days(len(prices), start)
    with open(path, "w", newline="") as fh:
        fh.write("date,value\n")
        for day, p in zip(dates, prices):
            fh.write(f"{day},{p:.6f}\n")
    return path
