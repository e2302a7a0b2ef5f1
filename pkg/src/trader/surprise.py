"""Energy-based intrinsic motivation from state-transition deviations.

A deviation vector holds the per-dimension population standard deviation
of (next_state - state) over a batch of transitions. A small ReLU network
maps deviations to per-dimension surprise estimates, whose log-sum-exp
energy shapes the extrinsic reward and contributes a penalty term to the
reported actor loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import neural
from .env import OBS_DIM
from .neural import Mlp


class BatchTooSmall(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SurpriseConfig:
    beta: float = 0.01
    penalty_coeff: float = 0.01
    enabled: bool = False
    # Sign of the intrinsic term in the shaped reward: +1 adds the energy
    # as printed in the shaping rule, -1 turns it into a penalty. Exposed
    # because the two readings produce opposite trading behavior.
    energy_sign: float = 1.0

    def __post_init__(self):
        # beta == 0 makes the intrinsic term vanish; allowed so the
        # zero-temperature identity is expressible.
        if self.enabled and self.beta < 0:
            raise ValueError("beta must be non-negative when enabled")
        if self.penalty_coeff < 0:
            raise ValueError("penalty_coeff must be non-negative")
        if self.energy_sign not in (1.0, -1.0):
            raise ValueError("energy_sign must be +1.0 or -1.0")


class SurpriseNet:
    """Deviation-to-surprise estimator: 36 -> 128 relu -> 36 identity."""

    def __init__(self, rng: Optional[np.random.Generator] = None,
                 net: Optional[Mlp] = None):
        self.net = net if net is not None else Mlp(
            [OBS_DIM, 128, OBS_DIM], ["relu", "identity"], rng=rng)

    def forward(self, sigma: np.ndarray) -> np.ndarray:
        out, _ = neural.forward(self.net, sigma)
        return out


def batch_deviations(states: np.ndarray, next_states: np.ndarray) -> np.ndarray:
    """Per-dimension population std of next_state - state over the batch."""
    states = np.asarray(states, dtype=np.float64)
    next_states = np.asarray(next_states, dtype=np.float64)
    if states.shape != next_states.shape:
        raise ShapeMismatch(f"{states.shape} vs {next_states.shape}")
    if states.ndim != 2:
        raise ShapeMismatch("expected (batch, dim) arrays")
    if states.shape[0] < 2:
        raise BatchTooSmall(f"need at least 2 transitions, got {states.shape[0]}")
    return np.std(next_states - states, axis=0)


def mellowmax_energy(v: np.ndarray) -> float:
    """log sum exp of v, stabilized by shifting out the maximum."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty vector")
    m = float(v.max())
    return m + float(np.log(np.sum(np.exp(v - m))))


def shaped_reward(r: float, sigma: np.ndarray, net: SurpriseNet, cfg: SurpriseConfig) -> float:
    """Extrinsic reward plus the (signed) temperature-weighted surprise energy.

    The intrinsic term is a plain number here: no gradient flows from the
    shaped reward back into the surprise network or the actor.
    """
    if not cfg.enabled:
        return r
    return r + cfg.energy_sign * cfg.beta * mellowmax_energy(net.forward(sigma))


def surprise_losses(sigma: np.ndarray, sigma_target: np.ndarray,
                    net: SurpriseNet, cfg: SurpriseConfig) -> tuple[float, float]:
    """(regression loss, energy penalty) for one deviation pair.

    Regression trains the network to predict the next batch's deviations;
    the penalty is the energy of the current prediction scaled by
    penalty_coeff.
    """
    loss, penalty, _, _ = surprise_losses_and_grads(sigma, sigma_target, net, cfg)
    return loss, penalty


def surprise_losses_and_grads(sigma: np.ndarray, sigma_target: np.ndarray,
                              net: SurpriseNet, cfg: SurpriseConfig,
                              ) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Losses plus their gradients w.r.t. the surprise-net parameters."""
    sigma = np.asarray(sigma, dtype=np.float64)
    sigma_target = np.asarray(sigma_target, dtype=np.float64)
    if sigma.shape != (OBS_DIM,) or sigma_target.shape != (OBS_DIM,):
        raise ShapeMismatch(f"expected ({OBS_DIM},) deviation vectors")

    out, tape = neural.forward(net.net, sigma)
    diff = out - sigma_target
    regression_loss = float(np.mean(diff * diff))
    reg_grad = neural.backward(net.net, tape, 2.0 * diff / diff.size)

    energy = mellowmax_energy(out)
    energy_penalty = cfg.penalty_coeff * energy
    # dE/d out = softmax(out); reuse a fresh tape for the second backward.
    _, tape2 = neural.forward(net.net, sigma)
    soft = np.exp(out - out.max())
    soft /= soft.sum()
    pen_grad = cfg.penalty_coeff * neural.backward(net.net, tape2, soft)
    return regression_loss, energy_penalty, reg_grad, pen_grad
