"""Hierarchical actor-critic: order quantity head, bid head, critic.

The order head is a squashed Gaussian: the network's final pre-activation
is the Gaussian mean, a single learnable log-std sets the spread, and the
sigmoid squash maps the draw into [0, 1]. The bid head is a categorical
over {Buy, Sell, Hold} conditioned on the observation concatenated with
the sampled quantity; the critic scores observations. Action log-density
factorizes as order term + bid term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import neural
from .env import OBS_DIM, Bid, HybridAction
from .neural import Mlp

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
LOG_2PI = math.log(2.0 * math.pi)
HIDDEN = 128


class DegenerateDistribution(ValueError):
    pass


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def log_sigmoid_derivative(u):
    """log d/du sigmoid(u), computed without underflow."""
    return -_softplus(u) - _softplus(-u)


def squashed_gaussian_logprob(pre_squash, mu, log_std):
    """Log-density of quantity = sigmoid(pre_squash) under N(mu, exp(log_std)^2)
    in pre-squash space, with the sigmoid change of variables."""
    sigma = np.exp(log_std)
    z = (pre_squash - mu) / sigma
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI - log_sigmoid_derivative(pre_squash)


def mask_hold(probs: np.ndarray, allow_hold: bool) -> np.ndarray:
    """Zero the Hold probability and renormalize Buy/Sell when holds are off."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[-1] != 3:
        raise ValueError("expected a 3-way bid distribution")
    if allow_hold:
        return probs
    trade_mass = probs[..., 0] + probs[..., 1]
    if np.any(trade_mass <= 0.0):
        raise DegenerateDistribution("Buy and Sell probabilities are both zero")
    out = probs.copy()
    out[..., 0] = probs[..., 0] / trade_mass
    out[..., 1] = probs[..., 1] / trade_mass
    out[..., 2] = 0.0
    return out


class OrderPolicy:
    def __init__(self, rng: Optional[np.random.Generator] = None,
                 net: Optional[Mlp] = None):
        self.net = net if net is not None else Mlp(
            [OBS_DIM, HIDDEN, HIDDEN, 1], ["tanh", "tanh", "sigmoid"], rng=rng)


class BidPolicy:
    def __init__(self, rng: Optional[np.random.Generator] = None,
                 net: Optional[Mlp] = None):
        self.net = net if net is not None else Mlp(
            [OBS_DIM + 1, HIDDEN, HIDDEN, 3], ["tanh", "tanh", "softmax"], rng=rng)


class Critic:
    def __init__(self, rng: Optional[np.random.Generator] = None,
                 net: Optional[Mlp] = None):
        self.net = net if net is not None else Mlp(
            [OBS_DIM, HIDDEN, HIDDEN, 1], ["tanh", "tanh", "identity"], rng=rng)


@dataclass
class ActionSample:
    action: HybridAction
    order_logprob: float
    bid_logprob: float
    value: float
    pre_squash: float


@dataclass
class PolicyEval:
    """Batched policy evaluation with the tapes needed for one backward pass."""

    mu: np.ndarray                 # (B,) order-head pre-squash means
    order_logprobs: np.ndarray     # (B,)
    bid_logits: np.ndarray         # (B, 3) bid-head pre-activations
    bid_probs: np.ndarray          # (B, 3) after hold masking
    bid_logprobs: np.ndarray       # (B,)
    entropies: np.ndarray          # (B,) categorical + Gaussian entropy
    values: np.ndarray             # (B,)
    order_tape: neural.GradientTape
    bid_tape: neural.GradientTape
    critic_tape: neural.GradientTape


class TraderAgent:
    """Order, bid and critic networks plus the sampling/evaluation logic."""

    def __init__(self, allow_hold: bool = True,
                 rng: Optional[np.random.Generator] = None,
                 log_std_init: float = -0.5):
        init_rng = rng if rng is not None else np.random.default_rng(0)
        self.order = OrderPolicy(init_rng)
        self.bid = BidPolicy(init_rng)
        self.critic = Critic(init_rng)
        self.log_std = float(np.clip(log_std_init, LOG_STD_MIN, LOG_STD_MAX))
        self.allow_hold = allow_hold
        self.rng = init_rng

    # --- flat parameter vector: [order | log_std | bid | critic] ---

    @property
    def n_params(self) -> int:
        return self.order.net.n_params + 1 + self.bid.net.n_params + self.critic.net.n_params

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([
            self.order.net.params,
            [self.log_std],
            self.bid.net.params,
            self.critic.net.params,
        ])

    def set_flat_params(self, flat: np.ndarray) -> None:
        if flat.shape != (self.n_params,):
            raise neural.ShapeMismatch(f"expected {self.n_params} params")
        n_o = self.order.net.n_params
        n_b = self.bid.net.n_params
        self.order.net.params = flat[:n_o].copy()
        self.log_std = float(np.clip(flat[n_o], LOG_STD_MIN, LOG_STD_MAX))
        self.bid.net.params = flat[n_o + 1 : n_o + 1 + n_b].copy()
        self.critic.net.params = flat[n_o + 1 + n_b :].copy()

    def pack_grads(self, order_grad, log_std_grad, bid_grad, critic_grad) -> np.ndarray:
        return np.concatenate([order_grad, [log_std_grad], bid_grad, critic_grad])

    # --- acting ---

    def _order_mean(self, obs: np.ndarray) -> tuple[np.ndarray, neural.GradientTape]:
        out, tape = neural.forward(self.order.net, obs)
        mu = tape.preacts[-1][..., 0]  # pre-sigmoid mean
        return mu, tape

    def sample_action(self, obs: np.ndarray, stochastic: bool = True) -> ActionSample:
        mu, _ = self._order_mean(obs)
        mu = float(mu if np.ndim(mu) == 0 else mu.item())
        sigma = math.exp(self.log_std)
        z = float(self.rng.standard_normal()) if stochastic else 0.0
        pre_squash = mu + sigma * z
        quantity = float(_sigmoid(np.float64(pre_squash)))
        order_lp = float(squashed_gaussian_logprob(pre_squash, mu, self.log_std))

        bid_in = np.concatenate([obs, [quantity]])
        probs, _ = neural.forward(self.bid.net, bid_in)
        probs = mask_hold(probs, self.allow_hold)
        if stochastic:
            bid = self._draw_bid(probs)
        else:
            bid = Bid(int(np.argmax(probs)))
        bid_lp = float(np.log(probs[int(bid)]))

        value_out, _ = neural.forward(self.critic.net, obs)
        return ActionSample(
            action=HybridAction(quantity=quantity, bid=bid),
            order_logprob=order_lp,
            bid_logprob=bid_lp,
            value=float(value_out[0]),
            pre_squash=pre_squash,
        )

    def _draw_bid(self, probs: np.ndarray) -> Bid:
        allowed = (0, 1, 2) if self.allow_hold else (0, 1)
        u = float(self.rng.random())
        acc = 0.0
        for idx in allowed:
            acc += float(probs[idx])
            if u < acc:
                return Bid(idx)
        return Bid(allowed[-1])

    def value(self, obs: np.ndarray) -> float:
        out, _ = neural.forward(self.critic.net, obs)
        return float(out[0])

    # --- batched evaluation for PPO ---

    def evaluate_full(self, obs: np.ndarray, pre_squash: np.ndarray,
                      quantities: np.ndarray, bids: np.ndarray) -> PolicyEval:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != OBS_DIM:
            raise neural.ShapeMismatch(f"obs batch shape {obs.shape}")
        n = obs.shape[0]
        pre_squash = np.asarray(pre_squash, dtype=np.float64).reshape(n)
        quantities = np.asarray(quantities, dtype=np.float64).reshape(n)
        bids = np.asarray(bids, dtype=np.int64).reshape(n)

        _, order_tape = neural.forward(self.order.net, obs)
        mu = order_tape.preacts[-1][:, 0]
        order_lp = squashed_gaussian_logprob(pre_squash, mu, self.log_std)

        bid_in = np.concatenate([obs, quantities[:, None]], axis=1)
        _, bid_tape = neural.forward(self.bid.net, bid_in)
        logits = bid_tape.preacts[-1]
        if self.allow_hold:
            active = logits
        else:
            active = logits[:, :2]
        lse = active.max(axis=1)
        lse = lse + np.log(np.sum(np.exp(active - lse[:, None]), axis=1))
        bid_lp = logits[np.arange(n), bids] - lse
        probs = np.exp(logits - lse[:, None])
        if not self.allow_hold:
            probs[:, 2] = 0.0

        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(probs > 0.0, probs * np.log(np.where(probs > 0.0, probs, 1.0)), 0.0)
        cat_entropy = -plogp.sum(axis=1)
        gauss_entropy = 0.5 * (1.0 + LOG_2PI) + self.log_std
        entropies = cat_entropy + gauss_entropy

        values_out, critic_tape = neural.forward(self.critic.net, obs)
        values = values_out[:, 0]
        return PolicyEval(mu=mu, order_logprobs=order_lp, bid_logits=logits,
                          bid_probs=probs, bid_logprobs=bid_lp, entropies=entropies,
                          values=values, order_tape=order_tape, bid_tape=bid_tape,
                          critic_tape=critic_tape)

    def evaluate_actions(self, obs: np.ndarray, pre_squash: np.ndarray,
                         quantities: np.ndarray, bids: np.ndarray,
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        ev = self.evaluate_full(obs, pre_squash, quantities, bids)
        return ev.order_logprobs, ev.bid_logprobs, ev.entropies, ev.values

    # --- persistence ---

    def to_dict(self) -> dict:
        return {
            "order": neural.net_to_dict(self.order.net),
            "bid": neural.net_to_dict(self.bid.net),
            "critic": neural.net_to_dict(self.critic.net),
            "log_std": float(self.log_std).hex(),
            "allow_hold": self.allow_hold,
        }

    @classmethod
    def from_dict(cls, d: dict, rng: Optional[np.random.Generator] = None) -> "TraderAgent":
        agent = cls.__new__(cls)
        agent.order = OrderPolicy(net=neural.net_from_dict(d["order"]))
        agent.bid = BidPolicy(net=neural.net_from_dict(d["bid"]))
        agent.critic = Critic(net=neural.net_from_dict(d["critic"]))
        agent.log_std = float.fromhex(d["log_std"])
        agent.allow_hold = bool(d["allow_hold"])
        agent.rng = rng if rng is not None else np.random.default_rng(0)
        return agent
