"""Trading environment walkthrough: account mechanics and reward variants.

Run: python demos/02_trading_environment.py
"""

import numpy as np

from trader.env import Bid, EnvConfig, HybridAction, RewardKind, TradingEnv
from trader.market_data import SyntheticConfig, generate_synthetic

series = generate_synthetic(SyntheticConfig(
    n_bars=200, initial_price=50.0, drift=0.001, volatility=0.004, seed=1))

env = TradingEnv(series, EnvConfig(starting_balance=10_000.0, episode_length=50))
obs = env.reset(start=5)
print(f"observation is {obs.shape[0]}-dimensional; account tail {obs[30:].round(3)}")

# Buy 40% of available cash, then sell half the position, then hold.
script = [HybridAction(0.4, Bid.BUY), HybridAction(0.5, Bid.SELL), HybridAction(0.0, Bid.HOLD)]
for action in script:
    price = series.close(env.t)
    reward, obs, done = env.step(action)
    s = env.snapshot()
    print(f"{action.bid.name:<4} q={action.quantity:.1f} @ {price:8.4f} | "
          f"balance {s.balance:9.2f} shares {s.shares_held:8.4f} "
          f"cost_basis {s.cost_basis:7.4f} net_worth {s.net_worth:9.2f} reward {reward:+.4f}")

# The same scripted trajectory under each reward definition.
print("\nreward streams for one fixed trajectory:")
for kind in RewardKind:
    env = TradingEnv(series, EnvConfig(episode_length=6, reward_kind=kind))
    env.reset(start=5)
    rewards = []
    for step in range(6):
        action = HybridAction(0.5, Bid.BUY) if step == 0 else HybridAction(0.0, Bid.HOLD)
        r, _, _ = env.step(action)
        rewards.append(r)
    print(f"  {kind.value:<8} {np.array(rewards).round(4)}")

# Forced-trade mode: hold bids degrade to zero-quantity sells.
env = TradingEnv(series, EnvConfig(episode_length=10, allow_hold=False))
env.reset(start=5)
env.step(HybridAction(0.5, Bid.BUY))
held_before = env.shares_held
env.step(HybridAction(0.9, Bid.HOLD))  # remapped: trades nothing
print(f"\nforced-trade mode: hold kept {env.shares_held:.4f} shares "
      f"(was {held_before:.4f}), total sold {env.total_shares_sold}")
