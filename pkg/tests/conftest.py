import numpy as np
import pytest

from trader.market_data import MarketBar, PriceSeries, SyntheticConfig, generate_synthetic


def make_bars(closes, opens=None, volume=1000.0, start_ts=1554076800, spacing=60):
    """Hand-built bar list with the loosest valid high/low envelope."""
    bars = []
    prev_close = closes[0]
    for i, c in enumerate(closes):
        o = opens[i] if opens is not None else prev_close
        bars.append(MarketBar(
            timestamp=start_ts + i * spacing,
            open=o, high=max(o, c) * 1.001, low=min(o, c) * 0.999,
            close=c, volume=volume,
        ))
        prev_close = c
    return bars


def constant_series(price=10.0, n=60, symbol="CONST"):
    return PriceSeries(symbol, make_bars([price] * n))


@pytest.fixture(scope="session")
def trend_series():
    return generate_synthetic(SyntheticConfig(
        n_bars=2000, initial_price=100.0, drift=0.0005, volatility=0.005, seed=11))


@pytest.fixture(scope="session")
def crash_series():
    return generate_synthetic(SyntheticConfig(
        n_bars=3000, initial_price=100.0, drift=0.0, volatility=0.005,
        crash_at=1500, crash_magnitude=0.3, seed=7))


@pytest.fixture(scope="session")
def small_series():
    return generate_synthetic(SyntheticConfig(
        n_bars=400, initial_price=100.0, drift=0.0, volatility=0.004, seed=5))


def rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
