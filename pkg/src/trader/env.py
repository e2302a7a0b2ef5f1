"""Deterministic trading environment over a PriceSeries.

One step executes a hybrid (quantity, bid) action at the current bar's
close price, updates the account, emits a scaled reward, then advances to
the next bar. Episodes end after a fixed number of steps or on bankruptcy
(net worth <= 0).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .market_data import PriceSeries


class Bid(enum.IntEnum):
    BUY = 0
    SELL = 1
    HOLD = 2


class RewardKind(enum.Enum):
    BALANCE = "balance"
    PROFIT = "profit"
    PNL = "pnl"


class SeriesTooShort(ValueError):
    pass


class SteppedAfterDone(RuntimeError):
    pass


@dataclass(frozen=True)
class HybridAction:
    """Continuous order fraction in [0, 1] plus a discrete bid."""

    quantity: float
    bid: Bid

    def __post_init__(self):
        if not 0.0 <= self.quantity <= 1.0:
            raise ValueError(f"quantity {self.quantity} outside [0, 1]")
        object.__setattr__(self, "bid", Bid(self.bid))


@dataclass
class PortfolioState:
    balance: float
    net_worth: float
    shares_held: float
    shares_sold_step: float
    total_shares_sold: float
    cost_basis: float
    sales_value: float
    t: int


@dataclass(frozen=True)
class EnvConfig:
    starting_balance: float = 10_000.0
    reward_kind: RewardKind = RewardKind.BALANCE
    allow_hold: bool = True
    episode_length: int = 10_000
    reward_scale: Optional[float] = None  # None -> 1 / starting_balance

    def __post_init__(self):
        if self.starting_balance <= 0:
            raise ValueError("starting_balance must be positive")
        if self.episode_length < 1:
            raise ValueError("episode_length must be positive")
        if self.reward_scale is not None and self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")

    @property
    def scale(self) -> float:
        return self.reward_scale if self.reward_scale is not None else 1.0 / self.starting_balance


def compute_reward(state: PortfolioState, prev: PortfolioState, kind: RewardKind,
                   starting_balance: float) -> float:
    """Raw (pre-scale) reward for the step that moved prev -> state."""
    if kind is RewardKind.BALANCE:
        return state.balance
    if kind is RewardKind.PROFIT:
        return state.net_worth - starting_balance
    return state.net_worth - prev.net_worth


OBS_DIM = 36


class TradingEnv:
    """Replay of one symbol's bars against a single account.

    Observations are 36-dimensional: the 5 preceding bars' normalized
    [open, high, low, close, volume, minute-of-day] features followed by
    the 6 account features [balance, net_worth, shares_held,
    total_shares_sold, cost_basis, sales_value]. Currency features are
    scaled by 1/(2 * starting_balance); share counts by the running peak
    of shares held (floored at 1).
    """

    def __init__(self, series: PriceSeries, cfg: EnvConfig,
                 rng: Optional[np.random.Generator] = None):
        self.series = series
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._reset_done = False
        self.done = True

    def _valid_start_range(self) -> tuple[int, int]:
        lo, hi = 5, len(self.series) - self.cfg.episode_length
        if hi <= lo:
            raise SeriesTooShort(
                f"series length {len(self.series)} cannot host an episode of "
                f"{self.cfg.episode_length} steps with a 5-bar lookback"
            )
        return lo, hi

    def reset(self, start: Optional[int] = None) -> np.ndarray:
        lo, hi = self._valid_start_range()
        if start is None:
            start = int(self.rng.integers(lo, hi))
        if not lo <= start < hi:
            raise SeriesTooShort(f"start {start} outside valid range [{lo}, {hi})")
        c = self.cfg
        self.balance = float(c.starting_balance)
        self.net_worth = float(c.starting_balance)
        self.shares_held = 0.0
        self.shares_sold_step = 0.0
        self.total_shares_sold = 0.0
        self.cost_basis = 0.0
        self.sales_value = 0.0
        self.t = start
        self.steps_taken = 0
        self.peak_shares = 0.0
        self.prev_net_worth = float(c.starting_balance)
        self.done = False
        self._reset_done = True
        return self.observe()

    def snapshot(self) -> PortfolioState:
        return PortfolioState(
            balance=self.balance,
            net_worth=self.net_worth,
            shares_held=self.shares_held,
            shares_sold_step=self.shares_sold_step,
            total_shares_sold=self.total_shares_sold,
            cost_basis=self.cost_basis,
            sales_value=self.sales_value,
            t=self.t,
        )

    def step(self, action: HybridAction) -> tuple[float, np.ndarray, bool]:
        if not self._reset_done:
            raise SteppedAfterDone("reset() must be called first")
        if self.done:
            raise SteppedAfterDone("episode is done; call reset()")

        prev = self.snapshot()
        p = self.series.close(self.t)
        q = action.quantity
        bid = action.bid
        if bid is Bid.HOLD and not self.cfg.allow_hold:
            # Forced-trade mode: a hold becomes a zero-quantity sell.
            bid, q = Bid.SELL, 0.0

        self.shares_sold_step = 0.0
        if bid is Bid.BUY:
            shares_bought = self.balance / p * q
            prev_cost = self.cost_basis * self.shares_held
            add_cost = shares_bought * p
            # max() guards the ulp-level overshoot of (balance/p)*q*p at q ~ 1.
            self.balance = max(0.0, self.balance - add_cost)
            denom = self.shares_held + shares_bought
            if denom > 0.0:
                self.cost_basis = (prev_cost + add_cost) / denom
            self.shares_held = self.shares_held + shares_bought
        elif bid is Bid.SELL:
            shares_sold = self.shares_held * q
            self.balance = self.balance + shares_sold * p
            self.shares_held = self.shares_held - shares_sold
            self.sales_value = shares_sold * p
            self.total_shares_sold = self.total_shares_sold + shares_sold
            self.shares_sold_step = shares_sold

        self.net_worth = self.balance + self.shares_held * p
        if self.shares_held > self.peak_shares:
            self.peak_shares = self.shares_held

        raw = compute_reward(self.snapshot(), prev, self.cfg.reward_kind, self.cfg.starting_balance)
        reward = raw * self.cfg.scale
        self.prev_net_worth = self.net_worth

        self.t += 1
        self.steps_taken += 1
        self.done = self.steps_taken >= self.cfg.episode_length or self.net_worth <= 0.0
        return reward, self.observe(), self.done

    def observe(self) -> np.ndarray:
        if not self._reset_done:
            raise SteppedAfterDone("reset() must be called first")
        c = self.cfg
        obs = np.empty(OBS_DIM, dtype=np.float64)
        obs[:30] = self.series.window_features(self.t)
        money = 2.0 * c.starting_balance
        share_scale = self.peak_shares if self.peak_shares > 1.0 else 1.0
        obs[30] = self.balance / money
        obs[31] = self.net_worth / money
        obs[32] = self.shares_held / share_scale
        obs[33] = self.total_shares_sold / share_scale
        obs[34] = self.cost_basis / money
        obs[35] = self.sales_value / money
        return obs
