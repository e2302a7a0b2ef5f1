"""OHLCV time-series ingestion, validation and synthetic path generation.

CSV schema (UTF-8, comma separated, header required):

    timestamp,open,high,low,close,volume

``timestamp`` is integer epoch seconds (UTC). Prices must be positive and
volume non-negative. Rows are sorted by timestamp on load; duplicate
timestamps keep the first occurrence (a warning is emitted).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

MINUTES_PER_DAY = 1440.0

# A series must cover the 5-bar lookback window plus one current bar.
MIN_BARS = 6


class MissingFile(FileNotFoundError):
    pass


class MalformedRow(ValueError):
    """Raised for a CSV row that cannot be parsed or violates bar invariants."""

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class EmptySeries(ValueError):
    pass


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class MarketBar:
    """One OHLCV record for a symbol at a timestep."""

    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        object.__setattr__(self, "timestamp", int(self.timestamp))
        for name in ("open", "high", "low", "close", "volume"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def validate(self) -> None:
        if not all(map(math.isfinite, (self.open, self.high, self.low, self.close, self.volume))):
            raise ValueError("non-finite field")
        if min(self.open, self.high, self.low, self.close) <= 0.0:
            raise ValueError("prices must be positive")
        if self.volume < 0.0:
            raise ValueError("volume must be non-negative")
        if self.low > self.high:
            raise ValueError("low > high")
        if self.low > min(self.open, self.close):
            raise ValueError("low above open/close")
        if self.high < max(self.open, self.close):
            raise ValueError("high below open/close")

    def minute_of_day(self) -> float:
        return float((self.timestamp // 60) % 1440)


class PriceSeries:
    """Immutable, time-ordered sequence of bars for one symbol.

    Exposes a pre-normalized per-bar feature matrix so that observation
    assembly during simulation is a cheap slice instead of repeated
    divisions.
    """

    def __init__(self, symbol: str, bars: Sequence[MarketBar]):
        ts = [b.timestamp for b in bars]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("bars must be strictly increasing in timestamp")
        self.symbol = symbol
        self.bars = tuple(bars)
        highs = np.array([b.high for b in self.bars], dtype=np.float64)
        vols = np.array([b.volume for b in self.bars], dtype=np.float64)
        self.max_share_price = float(highs.max()) if len(self.bars) else 0.0
        self.max_volume = float(vols.max()) if len(self.bars) else 0.0
        self._closes = np.array([b.close for b in self.bars], dtype=np.float64)
        self._features = self._build_features()

    def _build_features(self) -> np.ndarray:
        n = len(self.bars)
        feats = np.empty((n, 6), dtype=np.float64)
        price_scale = self.max_share_price if self.max_share_price > 0 else 1.0
        vol_scale = self.max_volume if self.max_volume > 0 else 1.0
        for i, b in enumerate(self.bars):
            feats[i, 0] = b.open / price_scale
            feats[i, 1] = b.high / price_scale
            feats[i, 2] = b.low / price_scale
            feats[i, 3] = b.close / price_scale
            feats[i, 4] = b.volume / vol_scale
            feats[i, 5] = b.minute_of_day() / MINUTES_PER_DAY
        return feats

    def __len__(self) -> int:
        return len(self.bars)

    def close(self, t: int) -> float:
        return float(self._closes[t])

    def window_features(self, t: int) -> np.ndarray:
        """Normalized features of the 5 bars preceding index t, flattened."""
        if t < 5 or t >= len(self.bars):
            raise IndexOutOfRange(f"t={t} outside [5, {len(self.bars)})")
        return self._features[t - 5 : t].reshape(-1)


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    """Seeded geometric-random-walk generator settings, with an optional
    one-bar crash injected at ``crash_at``."""

    n_bars: int
    initial_price: float = 100.0
    drift: float = 0.0
    volatility: float = 0.0
    crash_at: Optional[int] = None
    crash_magnitude: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_bars < 1:
            raise InvalidConfig("n_bars must be positive")
        if self.initial_price <= 0:
            raise InvalidConfig("initial_price must be positive")
        if self.volatility < 0:
            raise InvalidConfig("volatility must be non-negative")
        if self.crash_at is not None:
            if not 0 <= self.crash_at < self.n_bars:
                raise InvalidConfig("crash_at out of range")
            if not 0.0 < self.crash_magnitude < 1.0:
                raise InvalidConfig("crash_magnitude must be in (0, 1)")


# Synthetic timestamps start 2019-04-01 00:00 UTC at 1-minute spacing.
_SYNTH_EPOCH = 1554076800
_SYNTH_STEP = 60


def generate_synthetic(cfg: SyntheticConfig) -> PriceSeries:
    """Generate a seeded geometric random walk as a PriceSeries.

    Per-bar log-return is drift + volatility*z. Each bar opens at the
    previous close; high/low wicks extend max/min(open, close) by a
    volatility-scaled fraction (capped so prices stay positive). The crash,
    if configured, multiplies that bar's close by (1 - crash_magnitude).
    """
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    log_returns = cfg.drift + cfg.volatility * rng.standard_normal(cfg.n_bars)
    wick = np.minimum(np.abs(cfg.volatility * rng.standard_normal(cfg.n_bars)), 0.5)
    volume = 1e4 * np.exp(0.5 * rng.standard_normal(cfg.n_bars))

    bars = []
    prev_close = cfg.initial_price
    for i in range(cfg.n_bars):
        open_ = prev_close
        close = prev_close * math.exp(log_returns[i])
        if cfg.crash_at is not None and i == cfg.crash_at:
            close = close * (1.0 - cfg.crash_magnitude)
        high = max(open_, close) * (1.0 + wick[i])
        low = min(open_, close) * (1.0 - wick[i])
        bars.append(
            MarketBar(
                timestamp=_SYNTH_EPOCH + i * _SYNTH_STEP,
                open=open_,
                high=high,
                low=low,
                close=close,
                volume=float(volume[i]),
            )
        )
        prev_close = close
    return PriceSeries(symbol=f"SYN-{cfg.seed}", bars=bars)


_CSV_HEADER = ["timestamp", "open", "high", "low", "close", "volume"]


def load_csv(path: str, symbol: str) -> PriceSeries:
    """Load a PriceSeries from CSV, sorting by timestamp and dropping
    duplicate timestamps (first occurrence wins, with a warning).

    Rows that fail to parse or violate bar invariants raise MalformedRow
    with the offending 1-based line number.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError as e:
        raise MissingFile(str(e)) from e
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptySeries(f"{path}: empty file")
        if [h.strip() for h in header] != _CSV_HEADER:
            raise MalformedRow(1, f"bad header {header!r}, expected {_CSV_HEADER}")
        bars = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise MalformedRow(line_no, f"expected 6 fields, got {len(row)}")
            try:
                bar = MarketBar(
                    timestamp=int(row[0]),
                    open=float(row[1]),
                    high=float(row[2]),
                    low=float(row[3]),
                    close=float(row[4]),
                    volume=float(row[5]),
                )
                bar.validate()
            except MalformedRow:
                raise
            except ValueError as e:
                raise MalformedRow(line_no, str(e)) from e
            bars.append(bar)

    bars.sort(key=lambda b: b.timestamp)
    deduped = []
    dropped = 0
    for bar in bars:
        if deduped and bar.timestamp == deduped[-1].timestamp:
            dropped += 1
            continue
        deduped.append(bar)
    if dropped:
        warnings.warn(f"{path}: dropped {dropped} duplicate-timestamp rows (kept first)")
    if len(deduped) < MIN_BARS:
        raise EmptySeries(f"{path}: {len(deduped)} valid bars, need at least {MIN_BARS}")
    return PriceSeries(symbol=symbol, bars=deduped)


def save_csv(series: PriceSeries, path: str) -> None:
    """Write a PriceSeries in the schema load_csv reads.

    Floats are written as shortest round-trip decimals so that
    load_csv(save_csv(s)) reproduces s bit-exactly.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for b in series.bars:
            writer.writerow([b.timestamp, repr(b.open), repr(b.high), repr(b.low), repr(b.close), repr(b.volume)])


def window(series: PriceSeries, t: int) -> tuple[MarketBar, ...]:
    """The 5 bars preceding index t, in chronological order."""
    if t < 5 or t >= len(series):
        raise IndexOutOfRange(f"t={t} outside [5, {len(series)})")
    return series.bars[t - 5 : t]
