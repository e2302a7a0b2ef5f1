"""PPO learner for the hierarchical agent.

The loop alternates fixed-length on-policy rollouts with clipped-surrogate
updates. When the surprise pipeline is enabled, buffer rewards are shaped
chunk-by-chunk (one deviation vector per minibatch-sized slice of the
buffer, applied uniformly to that slice) before advantages are computed,
and the surprise network is regressed onto the following chunk's
deviations with its own Adam state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import neural, surprise as surprise_mod
from .agent import TraderAgent
from .env import OBS_DIM, Bid, EnvConfig, HybridAction, TradingEnv
from .market_data import PriceSeries
from .neural import AdamState, adam_step, clip_global_norm
from .surprise import SurpriseConfig, SurpriseNet


class BufferNotFull(RuntimeError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs_per_update: int = 4
    minibatch_size: int = 32
    value_coeff: float = 0.5
    entropy_coeff: float = 0.0
    max_grad_norm: float = 0.5
    learning_rate: float = 3e-4
    update_interval: int = 100

    def __post_init__(self):
        # gamma == 0 is degenerate but constructible: it reduces advantages
        # to one-step errors, which the tests exercise directly.
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")
        if self.minibatch_size > self.update_interval:
            raise ValueError("minibatch_size cannot exceed update_interval")
        if self.epochs_per_update < 1 or self.minibatch_size < 1 or self.update_interval < 1:
            raise ValueError("epochs, minibatch size and interval must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: HybridAction
    pre_squash: float
    order_logprob: float
    bid_logprob: float
    extrinsic_reward: float
    value: float
    done: bool
    next_obs: np.ndarray


class RolloutBuffer:
    """Fixed-capacity column store of transitions; cleared every phase."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.obs = np.empty((capacity, OBS_DIM))
        self.next_obs = np.empty((capacity, OBS_DIM))
        self.quantity = np.empty(capacity)
        self.pre_squash = np.empty(capacity)
        self.bid = np.empty(capacity, dtype=np.int64)
        self.order_logprob = np.empty(capacity)
        self.bid_logprob = np.empty(capacity)
        self.extrinsic_reward = np.empty(capacity)
        self.shaped_reward = np.empty(capacity)
        self.value = np.empty(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.cursor = 0

    def append(self, tr: Transition) -> None:
        if self.cursor >= self.capacity:
            raise IndexError("buffer full")
        i = self.cursor
        self.obs[i] = tr.obs
        self.next_obs[i] = tr.next_obs
        self.quantity[i] = tr.action.quantity
        self.pre_squash[i] = tr.pre_squash
        self.bid[i] = int(tr.action.bid)
        self.order_logprob[i] = tr.order_logprob
        self.bid_logprob[i] = tr.bid_logprob
        self.extrinsic_reward[i] = tr.extrinsic_reward
        self.shaped_reward[i] = tr.extrinsic_reward
        self.value[i] = tr.value
        self.done[i] = tr.done
        self.cursor = i + 1

    @property
    def full(self) -> bool:
        return self.cursor == self.capacity

    def __len__(self) -> int:
        return self.cursor

    def clear(self) -> None:
        self.cursor = 0
        self.done[:] = False

    def transitions(self) -> list[Transition]:
        return [
            Transition(
                obs=self.obs[i].copy(),
                action=HybridAction(float(self.quantity[i]), Bid(int(self.bid[i]))),
                pre_squash=float(self.pre_squash[i]),
                order_logprob=float(self.order_logprob[i]),
                bid_logprob=float(self.bid_logprob[i]),
                extrinsic_reward=float(self.extrinsic_reward[i]),
                value=float(self.value[i]),
                done=bool(self.done[i]),
                next_obs=self.next_obs[i].copy(),
            )
            for i in range(self.cursor)
        ]


@dataclass
class EpisodeEnd:
    index: int
    extrinsic_return: float
    net_worth: float
    shares_sold: float


class RolloutWorker:
    """Steps one env with one agent, resetting transparently at episode end."""

    def __init__(self, env: TradingEnv, agent: TraderAgent):
        self.env = env
        self.agent = agent
        self.obs = env.reset()
        self.episode_index = 0
        self.episode_return = 0.0

    def collect(self, n_steps: int) -> tuple[RolloutBuffer, list[EpisodeEnd], float, int]:
        """Gather n_steps transitions.

        Returns (buffer, episodes completed during collection, bootstrap
        value for the final transition, episode index owning the final
        transition).
        """
        buffer = RolloutBuffer(n_steps)
        ended: list[EpisodeEnd] = []
        last_episode = self.episode_index
        for _ in range(n_steps):
            sample = self.agent.sample_action(self.obs, stochastic=True)
            reward, next_obs, done = self.env.step(sample.action)
            buffer.append(Transition(
                obs=self.obs, action=sample.action, pre_squash=sample.pre_squash,
                order_logprob=sample.order_logprob, bid_logprob=sample.bid_logprob,
                extrinsic_reward=reward, value=sample.value, done=done,
                next_obs=next_obs,
            ))
            self.episode_return += reward
            last_episode = self.episode_index
            if done:
                ended.append(EpisodeEnd(
                    index=self.episode_index,
                    extrinsic_return=self.episode_return,
                    net_worth=self.env.net_worth,
                    shares_sold=self.env.total_shares_sold,
                ))
                self.episode_index += 1
                self.episode_return = 0.0
                self.obs = self.env.reset()
            else:
                self.obs = next_obs
        if buffer.done[-1]:
            last_value = 0.0
        else:
            last_value = self.agent.value(buffer.next_obs[-1])
        return buffer, ended, last_value, last_episode


def collect_rollout(env: TradingEnv, agent: TraderAgent, n_steps: int) -> RolloutBuffer:
    """Convenience one-shot rollout from a freshly reset worker."""
    return RolloutWorker(env, agent).collect(n_steps)[0]


def compute_advantages(buffer: RolloutBuffer, last_value: float, cfg: PpoConfig,
                       normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """GAE(lambda) advantages and value-regression targets.

    Terminal transitions bootstrap zero; a truncated rollout end bootstraps
    last_value. Advantages are normalized to zero mean / unit variance
    unless their spread is degenerate.
    """
    if not buffer.full:
        raise BufferNotFull(f"{len(buffer)}/{buffer.capacity} transitions")
    n = buffer.capacity
    rewards = buffer.shaped_reward
    values = buffer.value
    not_done = 1.0 - buffer.done.astype(np.float64)

    advantages = np.empty(n)
    gae = 0.0
    for t in reversed(range(n)):
        next_value = values[t + 1] if t < n - 1 else last_value
        delta = rewards[t] + cfg.gamma * next_value * not_done[t] - values[t]
        gae = delta + cfg.gamma * cfg.gae_lambda * not_done[t] * gae
        advantages[t] = gae
    returns = advantages + values

    if normalize:
        std = advantages.std()
        if std >= 1e-8:
            advantages = (advantages - advantages.mean()) / std
    return advantages, returns


def policy_surrogate(agent: TraderAgent, ev, pre_squash: np.ndarray, bids: np.ndarray,
                     old_joint: np.ndarray, advantages: np.ndarray, clip_eps: float,
                     entropy_coeff: float = 0.0, want_grads: bool = False) -> dict:
    """Clipped-surrogate policy loss (plus optional entropy bonus) with its
    gradients w.r.t. the actor parameters.

    `ev` is an evaluate_full() result for the same transitions; its tapes
    are consumed when want_grads is set. Loss value and gradient share this
    single code path so the finite-difference check exercises exactly what
    the learner optimizes.
    """
    b = len(bids)
    joint_new = ev.order_logprobs + ev.bid_logprobs
    ratio = np.exp(joint_new - old_joint)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr_plain = ratio * advantages
    surr_clip = clipped * advantages
    policy_loss = -float(np.mean(np.minimum(surr_plain, surr_clip)))
    entropy = float(np.mean(ev.entropies))
    out = {
        "policy_loss": policy_loss,
        "entropy": entropy,
        "mean_ratio": float(np.mean(ratio)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
    }
    if not want_grads:
        return out

    # d loss / d joint logprob: zero wherever the clipped branch is active.
    take_plain = surr_plain <= surr_clip
    dlp = np.where(take_plain, -advantages * ratio, 0.0) / b

    sigma = math.exp(agent.log_std)
    z = (pre_squash - ev.mu) / sigma
    dmu = dlp * z / sigma
    dlog_std = float(np.sum(dlp * (z * z - 1.0)))

    onehot = np.zeros((b, 3))
    onehot[np.arange(b), bids] = 1.0
    dlogits = dlp[:, None] * (onehot - ev.bid_probs)

    if entropy_coeff != 0.0:
        p = ev.bid_probs
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = np.where(p > 0.0, np.log(np.where(p > 0.0, p, 1.0)), 0.0)
        cat_h = -(p * logp).sum(axis=1, keepdims=True)
        dH = np.where(p > 0.0, -p * (logp + cat_h), 0.0)
        dlogits += -entropy_coeff / b * dH
        dlog_std += -entropy_coeff  # mean over batch of dH_gauss/dlog_std = 1

    out["order_grad"] = neural.backward(agent.order.net, ev.order_tape,
                                        dmu[:, None], at_preactivation=True)
    out["bid_grad"] = neural.backward(agent.bid.net, ev.bid_tape,
                                      dlogits, at_preactivation=True)
    out["log_std_grad"] = dlog_std
    return out


@dataclass
class UpdateStats:
    mean_ratio: float
    first_minibatch_mean_ratio: float
    clip_fraction: float
    policy_loss: float
    value_loss: float
    entropy: float
    surprise_loss: float
    energy_penalty: float
    total_loss: float


class PpoLearner:
    """Owns the optimizer state for the agent and the surprise network."""

    def __init__(self, agent: TraderAgent, surprise_net: SurpriseNet,
                 cfg: PpoConfig, surprise_cfg: SurpriseConfig,
                 rng: np.random.Generator):
        self.agent = agent
        self.surprise_net = surprise_net
        self.cfg = cfg
        self.surprise_cfg = surprise_cfg
        self.rng = rng
        self.adam = AdamState.init(agent.n_params, cfg.learning_rate)
        self.surprise_adam = AdamState.init(surprise_net.net.n_params, cfg.learning_rate)
        self.prev_sigma: Optional[np.ndarray] = None

    def shape_rewards(self, buffer: RolloutBuffer) -> list[np.ndarray]:
        """Add the signed energy bonus per consecutive minibatch-sized chunk."""
        scfg = self.surprise_cfg
        sigmas = []
        size = self.cfg.minibatch_size
        for start in range(0, buffer.capacity, size):
            stop = min(start + size, buffer.capacity)
            if stop - start < 2:
                # A trailing single transition joins the previous chunk.
                sigma = sigmas[-1] if sigmas else None
            else:
                sigma = surprise_mod.batch_deviations(
                    buffer.obs[start:stop], buffer.next_obs[start:stop])
                sigmas.append(sigma)
            if sigma is None:
                continue
            energy = surprise_mod.mellowmax_energy(self.surprise_net.forward(sigma))
            buffer.shaped_reward[start:stop] = (
                buffer.extrinsic_reward[start:stop] + scfg.energy_sign * scfg.beta * energy)
        return sigmas

    def update(self, buffer: RolloutBuffer, last_value: float) -> UpdateStats:
        if not buffer.full:
            raise BufferNotFull(f"{len(buffer)}/{buffer.capacity} transitions")
        cfg = self.cfg
        checkpoint = (self.agent.get_flat_params(), self.adam,
                      self.surprise_net.net.params.copy(), self.surprise_adam,
                      None if self.prev_sigma is None else self.prev_sigma.copy())

        try:
            if self.surprise_cfg.enabled:
                sigmas = self.shape_rewards(buffer)
            else:
                buffer.shaped_reward[:buffer.capacity] = buffer.extrinsic_reward[:buffer.capacity]
                sigmas = []
            if not np.all(np.isfinite(buffer.shaped_reward)):
                raise NonFiniteLoss("non-finite rewards in buffer")
            advantages, returns = compute_advantages(buffer, last_value, cfg)
            if not (np.all(np.isfinite(advantages)) and np.all(np.isfinite(returns))):
                raise NonFiniteLoss("non-finite advantages or returns")

            old_joint = buffer.order_logprob + buffer.bid_logprob
            stats = self._run_epochs(buffer, advantages, returns, old_joint)
            surprise_loss, penalty = self._update_surprise(sigmas)
        except NonFiniteLoss:
            params, adam, sparams, sadam, prev_sigma = checkpoint
            self.agent.set_flat_params(params)
            self.adam = adam
            self.surprise_net.net.params = sparams
            self.surprise_adam = sadam
            self.prev_sigma = prev_sigma
            raise

        stats.surprise_loss = surprise_loss
        stats.energy_penalty = penalty
        stats.total_loss += penalty
        return stats

    def _run_epochs(self, buffer, advantages, returns, old_joint) -> UpdateStats:
        cfg = self.cfg
        n = buffer.capacity
        ratios_acc, clip_acc, pol_acc, val_acc, ent_acc = [], [], [], [], []
        first_ratio = None
        for _ in range(cfg.epochs_per_update):
            perm = self.rng.permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                idx = perm[start : start + cfg.minibatch_size]
                mb = self._minibatch_step(buffer, idx, advantages, returns, old_joint)
                if first_ratio is None:
                    first_ratio = mb["mean_ratio"]
                ratios_acc.append(mb["mean_ratio"])
                clip_acc.append(mb["clip_fraction"])
                pol_acc.append(mb["policy_loss"])
                val_acc.append(mb["value_loss"])
                ent_acc.append(mb["entropy"])
        policy_loss = float(np.mean(pol_acc))
        value_loss = float(np.mean(val_acc))
        entropy = float(np.mean(ent_acc))
        return UpdateStats(
            mean_ratio=float(np.mean(ratios_acc)),
            first_minibatch_mean_ratio=float(first_ratio),
            clip_fraction=float(np.mean(clip_acc)),
            policy_loss=policy_loss,
            value_loss=value_loss,
            entropy=entropy,
            surprise_loss=0.0,
            energy_penalty=0.0,
            total_loss=policy_loss + cfg.value_coeff * value_loss - cfg.entropy_coeff * entropy,
        )

    def _minibatch_step(self, buffer, idx, advantages, returns, old_joint) -> dict:
        cfg = self.cfg
        agent = self.agent
        b = len(idx)
        ev = agent.evaluate_full(buffer.obs[idx], buffer.pre_squash[idx],
                                 buffer.quantity[idx], buffer.bid[idx])

        surro = policy_surrogate(agent, ev, buffer.pre_squash[idx], buffer.bid[idx],
                                 old_joint[idx], advantages[idx], cfg.clip_eps,
                                 entropy_coeff=cfg.entropy_coeff, want_grads=True)
        value_err = ev.values - returns[idx]
        value_loss = float(np.mean(value_err * value_err))
        loss_val = (surro["policy_loss"] + cfg.value_coeff * value_loss
                    - cfg.entropy_coeff * surro["entropy"])
        if not math.isfinite(loss_val):
            raise NonFiniteLoss(f"loss {loss_val}")

        dvalue = cfg.value_coeff * 2.0 * value_err / b
        critic_grad = neural.backward(agent.critic.net, ev.critic_tape,
                                      dvalue[:, None], at_preactivation=True)
        flat_grad = agent.pack_grads(surro["order_grad"], surro["log_std_grad"],
                                     surro["bid_grad"], critic_grad)
        if not np.all(np.isfinite(flat_grad)):
            raise NonFiniteLoss("non-finite gradient")
        flat_grad = clip_global_norm(flat_grad, cfg.max_grad_norm)
        new_params, self.adam = adam_step(agent.get_flat_params(), flat_grad, self.adam)
        agent.set_flat_params(new_params)

        return {
            "mean_ratio": surro["mean_ratio"],
            "clip_fraction": surro["clip_fraction"],
            "policy_loss": surro["policy_loss"],
            "value_loss": value_loss,
            "entropy": surro["entropy"],
        }

    def _update_surprise(self, sigmas: list[np.ndarray]) -> tuple[float, float]:
        """Regress the surprise net onto each next deviation in the stream."""
        if not self.surprise_cfg.enabled or not sigmas:
            return 0.0, 0.0
        stream = ([] if self.prev_sigma is None else [self.prev_sigma]) + sigmas
        losses, penalties = [], []
        for cur, nxt in zip(stream, stream[1:]):
            loss, penalty, reg_grad, _pen_grad = surprise_mod.surprise_losses_and_grads(
                cur, nxt, self.surprise_net, self.surprise_cfg)
            if not (math.isfinite(loss) and np.all(np.isfinite(reg_grad))):
                raise NonFiniteLoss("non-finite surprise loss")
            new_params, self.surprise_adam = adam_step(
                self.surprise_net.net.params, reg_grad, self.surprise_adam)
            self.surprise_net.net.params = new_params
            losses.append(loss)
            penalties.append(penalty)
        self.prev_sigma = sigmas[-1]
        if not losses:
            return 0.0, 0.0
        return float(np.mean(losses)), float(np.mean(penalties))


def ppo_update(agent: TraderAgent, surprise_net: SurpriseNet, buffer: RolloutBuffer,
               cfg: PpoConfig, surprise_cfg: SurpriseConfig,
               learner: Optional[PpoLearner] = None,
               last_value: float = 0.0) -> UpdateStats:
    """One update phase; creates a throwaway learner unless one is supplied."""
    if learner is None:
        learner = PpoLearner(agent, surprise_net, cfg, surprise_cfg,
                             np.random.default_rng(0))
    return learner.update(buffer, last_value)


@dataclass
class EpisodeRow:
    episode: int
    extrinsic_return: float
    net_worth: float
    shares_sold: float
    policy_loss: float
    value_loss: float
    surprise_loss: float
    clip_fraction: float


TRAINING_LOG_HEADER = ["episode", "extrinsic_return", "net_worth", "shares_sold",
                       "policy_loss", "value_loss", "surprise_loss", "clip_fraction"]


@dataclass
class TrainingLog:
    seed: int
    rows: list = field(default_factory=list)
    updates: list = field(default_factory=list)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAINING_LOG_HEADER)
            for r in self.rows:
                writer.writerow([r.episode, repr(r.extrinsic_return), repr(r.net_worth),
                                 repr(r.shares_sold), repr(r.policy_loss), repr(r.value_loss),
                                 repr(r.surprise_loss), repr(r.clip_fraction)])

    @staticmethod
    def read_csv(path: str) -> list[EpisodeRow]:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != TRAINING_LOG_HEADER:
                raise ValueError(f"unexpected header {header!r}")
            return [EpisodeRow(int(r[0]), *(float(x) for x in r[1:])) for r in reader]


def train(series: PriceSeries, env_cfg: EnvConfig, ppo_cfg: PpoConfig,
          surprise_cfg: SurpriseConfig, episodes: int, seed: int,
          agent: Optional[TraderAgent] = None,
          on_episode=None) -> tuple[TrainingLog, TraderAgent]:
    """Run the full collect/update loop; reproducible from the seed alone.

    `on_episode(episode_index, agent)` fires after each episode row is
    finalized (used by the harness for periodic checkpoints).
    """
    total_steps = episodes * env_cfg.episode_length
    if total_steps % ppo_cfg.update_interval != 0:
        raise ValueError("episodes * episode_length must be divisible by update_interval")

    rng = np.random.Generator(np.random.PCG64(seed))
    if agent is None:
        agent = TraderAgent(allow_hold=env_cfg.allow_hold, rng=rng)
    # Constructed unconditionally so the draw stream does not depend on the
    # surprise toggle; only its use does.
    surprise_net = SurpriseNet(rng=rng)
    learner = PpoLearner(agent, surprise_net, ppo_cfg, surprise_cfg, rng)
    env = TradingEnv(series, env_cfg, rng=rng)
    worker = RolloutWorker(env, agent)

    log = TrainingLog(seed=seed)
    buckets: dict[int, list[UpdateStats]] = {}
    n_phases = total_steps // ppo_cfg.update_interval
    for _ in range(n_phases):
        buffer, ended, last_value, last_episode = worker.collect(ppo_cfg.update_interval)
        stats = learner.update(buffer, last_value)
        log.updates.append(stats)
        buckets.setdefault(last_episode, []).append(stats)
        for ep in ended:
            phase_stats = buckets.pop(ep.index, [])
            if phase_stats:
                pol = float(np.mean([s.policy_loss for s in phase_stats]))
                val = float(np.mean([s.value_loss for s in phase_stats]))
                sur = float(np.mean([s.surprise_loss for s in phase_stats]))
                clip = float(np.mean([s.clip_fraction for s in phase_stats]))
            else:
                pol = val = sur = clip = 0.0
            log.rows.append(EpisodeRow(
                episode=ep.index, extrinsic_return=ep.extrinsic_return,
                net_worth=ep.net_worth, shares_sold=ep.shares_sold,
                policy_loss=pol, value_loss=val, surprise_loss=sur,
                clip_fraction=clip))
            if on_episode is not None:
                on_episode(ep.index, agent)
    return log, agent
