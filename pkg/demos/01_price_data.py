"""Price data walkthrough: synthetic paths, crash injection, CSV round trips.

Run: python demos/01_price_data.py
"""

import os
import tempfile

from trader.market_data import SyntheticConfig, generate_synthetic, load_csv, save_csv, window

# A seeded geometric random walk. Same config -> bit-identical series.
cfg = SyntheticConfig(n_bars=500, initial_price=100.0, drift=0.0002,
                      volatility=0.01, seed=42)
series = generate_synthetic(cfg)
print(f"generated {len(series)} bars for {series.symbol}")
print(f"  first close {series.bars[0].close:.4f}, last close {series.bars[-1].close:.4f}")
print(f"  max share price {series.max_share_price:.4f}, max volume {series.max_volume:.0f}")

# Inject a 30% single-bar crash halfway through.
crash = generate_synthetic(SyntheticConfig(
    n_bars=500, initial_price=100.0, volatility=0.005,
    crash_at=250, crash_magnitude=0.3, seed=42))
before, after = crash.bars[249].close, crash.bars[250].close
print(f"\ncrash injection: close[249]={before:.4f} -> close[250]={after:.4f} "
      f"(ratio {after / before:.4f})")

# The 5-bar lookback window that feeds observations.
bars = window(series, t=10)
print("\n5-bar window before t=10:")
for b in bars:
    print(f"  ts={b.timestamp} o={b.open:.3f} h={b.high:.3f} l={b.low:.3f} "
          f"c={b.close:.3f} v={b.volume:.0f}")

# CSV round trip is bit-exact: save then load reproduces every bar.
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "series.csv")
    save_csv(series, path)
    back = load_csv(path, series.symbol)
    assert back.bars == series.bars
    print(f"\nsaved and reloaded {path.split(os.sep)[-1]}: round trip exact "
          f"({len(back)} bars)")
