"""End-to-end training demo: PPO on a trending market vs fixed baselines.

Takes about half a minute. Run: python demos/05_training_run.py
"""

import numpy as np

from trader.env import EnvConfig, RewardKind
from trader.harness import evaluate_agent, normalize_returns, run_baseline
from trader.market_data import SyntheticConfig, generate_synthetic
from trader.surprise import SurpriseConfig
from trader.trainer import PpoConfig, train

series = generate_synthetic(SyntheticConfig(
    n_bars=2000, initial_price=100.0, drift=0.0005, volatility=0.005, seed=11))
env_cfg = EnvConfig(episode_length=500, reward_kind=RewardKind.PNL)

print("training 5 episodes x 500 steps (PPO updates every 100 steps)...")
log, agent = train(series, env_cfg, PpoConfig(), SurpriseConfig(enabled=True),
                   episodes=5, seed=0)
for row in log.rows:
    print(f"  episode {row.episode}: net worth {row.net_worth:9.2f} "
          f"shares sold {row.shares_sold:8.1f} policy loss {row.policy_loss:+.4f} "
          f"surprise loss {row.surprise_loss:.4f}")

baseline = run_baseline(series, env_cfg, start=5, random_seed=0)
print(f"\nbuy-and-hold max profit {baseline.buy_hold_max_profit:9.2f} "
      f"final {baseline.buy_hold_final_profit:9.2f}")
print(f"random policy   max profit {baseline.random_max_profit:9.2f} "
      f"final {baseline.random_final_profit:9.2f}")

evald = evaluate_agent(agent, series, env_cfg, start=5)
print(f"trained agent (deterministic) final net worth {evald['final_net_worth']:9.2f}")

rows = normalize_returns(log, baseline, series, env_cfg, run_id="demo")
print("\nper-episode normalized returns (agent profit / buy-and-hold max profit):")
print(" ", np.array([r.normalized_return for r in rows]).round(3))
