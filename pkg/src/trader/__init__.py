"""Hierarchical RL trade-execution engine.

A two-level policy (continuous order fraction, discrete buy/sell/hold bid)
is trained with PPO against a simulated OHLCV market, optionally shaped by
an energy-based surprise signal derived from state-transition deviations.
"""

__version__ = "0.1.0"

from .agent import ActionSample, BidPolicy, Critic, OrderPolicy, TraderAgent, mask_hold
from .env import (Bid, EnvConfig, HybridAction, PortfolioState, RewardKind,
                  TradingEnv, compute_reward)
from .market_data import (MarketBar, PriceSeries, SyntheticConfig,
                          generate_synthetic, load_csv, save_csv, window)
from .neural import AdamState, GradientTape, Mlp, adam_step, backward, forward
from .surprise import (SurpriseConfig, SurpriseNet, batch_deviations,
                       mellowmax_energy, shaped_reward, surprise_losses)
from .trainer import (PpoConfig, PpoLearner, RolloutBuffer, TrainingLog,
                      Transition, collect_rollout, compute_advantages,
                      ppo_update, train)
