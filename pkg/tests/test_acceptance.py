"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s`. The behavioral checks
(criteria 6-8) train real agents and together take several minutes.
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from trader.agent import TraderAgent
from trader.env import Bid, EnvConfig, HybridAction, RewardKind, TradingEnv
from trader.harness import evaluate_agent, run_baseline
from trader.market_data import SyntheticConfig, generate_synthetic
from trader.neural import Mlp, backward, forward
from trader.surprise import SurpriseConfig, mellowmax_energy
from trader.trainer import (PpoConfig, RolloutBuffer, Transition,
                            compute_advantages, policy_surrogate, train)


def report(criterion, text):
    print(f"\n[PASS] criterion {criterion}: {text}")


def close_rel(a, b, rel=1e-4, abs_tol=1e-8):
    return abs(a - b) <= rel * max(abs(a), abs(b)) + abs_tol


# ---------------------------------------------------------------- criterion 1


class OracleAccount:
    """Straight-line transcription of the trading-step arithmetic."""

    def __init__(self, starting_balance):
        self.balance = float(starting_balance)
        self.net_worth = float(starting_balance)
        self.shares_held = 0.0
        self.shares_sold_step = 0.0
        self.total_shares_sold = 0.0
        self.cost_basis = 0.0
        self.sales_value = 0.0

    def step(self, p, q, bid, allow_hold):
        if bid == 2 and not allow_hold:
            bid, q = 1, 0.0
        self.shares_sold_step = 0.0
        if bid == 0:
            shares_bought = self.balance / p * q
            prev_cost = self.cost_basis * self.shares_held
            add_cost = shares_bought * p
            self.balance = max(0.0, self.balance - add_cost)
            denom = self.shares_held + shares_bought
            if denom > 0.0:
                self.cost_basis = (prev_cost + add_cost) / denom
            self.shares_held = self.shares_held + shares_bought
        elif bid == 1:
            shares_sold = self.shares_held * q
            self.balance = self.balance + shares_sold * p
            self.shares_held = self.shares_held - shares_sold
            self.sales_value = shares_sold * p
            self.total_shares_sold = self.total_shares_sold + shares_sold
            self.shares_sold_step = shares_sold
        self.net_worth = self.balance + self.shares_held * p


def test_c01_environment_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(101)
    for trial in range(1000):
        series = generate_synthetic(SyntheticConfig(
            n_bars=int(rng.integers(40, 80)),
            initial_price=float(rng.uniform(5.0, 500.0)),
            drift=float(rng.uniform(-0.002, 0.002)),
            volatility=float(rng.uniform(0.0, 0.02)),
            seed=int(rng.integers(0, 2**31)),
        ))
        episode_length = int(rng.integers(10, 31))
        allow_hold = bool(rng.integers(0, 2))
        sb = float(rng.uniform(100.0, 50_000.0))
        cfg = EnvConfig(starting_balance=sb, episode_length=episode_length,
                        allow_hold=allow_hold)
        env = TradingEnv(series, cfg)
        start = int(rng.integers(5, len(series) - episode_length))
        env.reset(start=start)
        oracle = OracleAccount(sb)
        done = False
        t = start
        while not done:
            p = series.close(t)
            q = float(rng.random())
            bid = int(rng.integers(0, 3))
            _, _, done = env.step(HybridAction(q, Bid(bid)))
            oracle.step(p, q, bid, allow_hold)
            s = env.snapshot()
            assert s.balance == oracle.balance
            assert s.net_worth == oracle.net_worth
            assert s.shares_held == oracle.shares_held
            assert s.shares_sold_step == oracle.shares_sold_step
            assert s.total_shares_sold == oracle.total_shares_sold
            assert s.cost_basis == oracle.cost_basis
            assert s.sales_value == oracle.sales_value
            t += 1
    elapsed = time.time() - t0
    assert elapsed < 10.0
    report(1, f"1000 random action sequences match the straight-line oracle "
              f"bit-exactly ({elapsed:.1f}s)")


# ---------------------------------------------------------------- criterion 2


def test_c02_conservation_invariants():
    t0 = time.time()
    rng = np.random.default_rng(202)
    series = generate_synthetic(SyntheticConfig(
        n_bars=2000, initial_price=100.0, drift=0.0001, volatility=0.008, seed=3))
    cfg = EnvConfig(episode_length=500)
    env = TradingEnv(series, cfg, rng=rng)
    steps = 0
    while steps < 100_000:
        env.reset()
        done = False
        while not done and steps < 100_000:
            p = series.close(env.t)
            nw_before = env.balance + env.shares_held * p
            action = HybridAction(float(rng.random()), Bid(int(rng.integers(0, 3))))
            _, _, done = env.step(action)
            nw_after = env.balance + env.shares_held * p
            assert env.balance >= 0.0
            assert env.shares_held >= 0.0
            assert abs(nw_after - nw_before) <= 1e-9 * max(1.0, abs(nw_before))
            steps += 1
    elapsed = time.time() - t0
    assert elapsed < 10.0
    report(2, f"conservation, balance >= 0 and shares >= 0 held over "
              f"{steps} random steps ({elapsed:.1f}s)")


# ---------------------------------------------------------------- criterion 3


def test_c03_mellowmax_properties():
    t0 = time.time()
    rng = np.random.default_rng(303)
    for _ in range(10_000):
        n = int(rng.integers(1, 65))
        u = rng.uniform(-1e3, 1e3, size=n)
        v = rng.uniform(-1e3, 1e3, size=n)
        eu, ev_ = mellowmax_energy(u), mellowmax_energy(v)
        assert abs(eu - ev_) <= np.max(np.abs(u - v)) + 1e-12
        assert u.max() - 1e-12 <= eu <= u.max() + math.log(n) + 1e-12
        bump = rng.uniform(0.0, 100.0, size=n)
        assert eu <= mellowmax_energy(u + bump) + 1e-12
    elapsed = time.time() - t0
    assert elapsed < 5.0
    report(3, f"non-expansion, bounds and monotonicity on 10^4 random pairs "
              f"(dims 1-64, values +-1e3) ({elapsed:.1f}s)")


# ---------------------------------------------------------------- criterion 4

REPO_SHAPES = [
    ([36, 128, 128, 1], ["tanh", "tanh", "sigmoid"]),    # order head
    ([37, 128, 128, 3], ["tanh", "tanh", "softmax"]),    # bid head
    ([36, 128, 128, 1], ["tanh", "tanh", "identity"]),   # critic
    ([36, 128, 36], ["relu", "identity"]),               # surprise net
]


def check_net_gradient(layer_sizes, activations, rng, n_points, coords_per_point=8):
    n_in, n_out = layer_sizes[0], layer_sizes[-1]
    h = 1e-5
    for _ in range(n_points):
        net = Mlp(layer_sizes, activations, rng=rng)
        x = rng.standard_normal(n_in)
        g = rng.standard_normal(n_out)
        _, tape = forward(net, x)
        analytic = backward(net, tape, g)

        def loss(params):
            net.params = params
            y, _ = forward(net, x)
            return float(np.dot(g, y))

        base = net.params.copy()
        idx = rng.choice(base.size, size=coords_per_point, replace=False)
        for i in idx:
            up, down = base.copy(), base.copy()
            up[i] += h
            down[i] -= h
            numeric = (loss(up) - loss(down)) / (2 * h)
            assert close_rel(analytic[i], numeric), (layer_sizes, i, analytic[i], numeric)
        # one random-direction derivative over the whole parameter vector
        d = rng.standard_normal(base.size)
        d /= np.linalg.norm(d)
        numeric = (loss(base + h * d) - loss(base - h * d)) / (2 * h)
        assert close_rel(float(np.dot(analytic, d)), numeric, rel=1e-4, abs_tol=1e-7)
        net.params = base


def actor_vector(agent):
    return np.concatenate([agent.order.net.params, [agent.log_std], agent.bid.net.params])


def set_actor_vector(agent, vec):
    n_o = agent.order.net.n_params
    agent.order.net.params = vec[:n_o].copy()
    agent.log_std = float(vec[n_o])  # kept inside the clamp range by construction
    agent.bid.net.params = vec[n_o + 1:].copy()


def test_c04_gradient_checks():
    t0 = time.time()
    rng = np.random.default_rng(404)
    for layer_sizes, activations in REPO_SHAPES:
        check_net_gradient(layer_sizes, activations, rng, n_points=100)

    # PPO policy-loss gradient on a 5-transition buffer, 100 random points.
    clip_eps = 0.2
    points = 0
    while points < 100:
        agent = TraderAgent(rng=rng, log_std_init=float(rng.uniform(-1.5, 0.2)))
        obs = rng.random((5, 36))
        pre_squash = rng.standard_normal(5) * 0.8
        quantities = 1.0 / (1.0 + np.exp(-pre_squash))
        bids = rng.integers(0, 3, size=5)
        old_joint = rng.standard_normal(5) * 0.3 - 2.0
        advantages = rng.standard_normal(5)

        def policy_loss(vec):
            set_actor_vector(agent, vec)
            ev = agent.evaluate_full(obs, pre_squash, quantities, bids)
            return policy_surrogate(agent, ev, pre_squash, bids, old_joint,
                                    advantages, clip_eps)["policy_loss"]

        base = actor_vector(agent)
        ev = agent.evaluate_full(obs, pre_squash, quantities, bids)
        ratio = np.exp(ev.order_logprobs + ev.bid_logprobs - old_joint)
        # skip parameter points sitting on the clip kink (non-differentiable)
        if np.min(np.abs(ratio - (1 - clip_eps))) < 1e-3 or \
           np.min(np.abs(ratio - (1 + clip_eps))) < 1e-3:
            continue
        ev = agent.evaluate_full(obs, pre_squash, quantities, bids)
        surro = policy_surrogate(agent, ev, pre_squash, bids, old_joint,
                                 advantages, clip_eps, want_grads=True)
        analytic = np.concatenate([surro["order_grad"], [surro["log_std_grad"]],
                                   surro["bid_grad"]])
        h = 1e-5
        idx = rng.choice(base.size, size=8, replace=False)
        for i in idx:
            up, down = base.copy(), base.copy()
            up[i] += h
            down[i] -= h
            numeric = (policy_loss(up) - policy_loss(down)) / (2 * h)
            assert close_rel(analytic[i], numeric), ("ppo", i, analytic[i], numeric)
        set_actor_vector(agent, base)
        points += 1

    elapsed = time.time() - t0
    assert elapsed < 60.0
    report(4, f"analytic gradients match central differences (1e-4 relative) for "
              f"all four network shapes and the PPO policy loss ({elapsed:.1f}s)")


# ---------------------------------------------------------------- criterion 5


def brute_force_returns(rewards, dones, gamma, last_value):
    n = len(rewards)
    out = np.zeros(n)
    for t in range(n):
        acc, disc = 0.0, 1.0
        bootstrapped = True
        for k in range(t, n):
            acc += disc * rewards[k]
            disc *= gamma
            if dones[k]:
                bootstrapped = False
                break
        if bootstrapped:
            acc += disc * last_value
        out[t] = acc
    return out


def test_c05_gae_oracle():
    t0 = time.time()
    rng = np.random.default_rng(505)
    for _ in range(500):
        n = int(rng.integers(1, 11))
        rewards = rng.standard_normal(n)
        values = rng.standard_normal(n)
        dones = rng.random(n) < 0.25
        last_value = float(rng.standard_normal())
        gamma = float(rng.uniform(0.0, 1.0))
        buf = RolloutBuffer(n)
        for r, v, d in zip(rewards, values, dones):
            buf.append(Transition(obs=np.zeros(36), action=HybridAction(0.5, Bid.HOLD),
                                  pre_squash=0.0, order_logprob=0.0, bid_logprob=0.0,
                                  extrinsic_reward=float(r), value=float(v),
                                  done=bool(d), next_obs=np.zeros(36)))
        cfg = PpoConfig(gamma=gamma, gae_lambda=1.0, update_interval=n,
                        minibatch_size=min(n, 4))
        adv, returns = compute_advantages(buf, last_value, cfg, normalize=False)
        expected = brute_force_returns(rewards, dones, gamma, last_value)
        assert np.max(np.abs(returns - expected)) < 1e-10
        assert np.max(np.abs(adv - (expected - values))) < 1e-10
    elapsed = time.time() - t0
    assert elapsed < 5.0
    report(5, f"lambda=1 advantages match brute-force discounted sums on 500 "
              f"random buffers ({elapsed:.1f}s)")


# ------------------------------------------------------- criteria 6 + 11

N_SEEDS = 5
DESK_EPISODES = 20          # 20 episodes x 1000 steps = 20k training steps
DESK_EPISODE_LENGTH = 1000


@pytest.fixture(scope="module")
def ppo_sanity_runs():
    series = generate_synthetic(SyntheticConfig(
        n_bars=2000, initial_price=100.0, drift=0.0005, volatility=0.005, seed=11))
    env_cfg = EnvConfig(episode_length=DESK_EPISODE_LENGTH, reward_kind=RewardKind.PNL)
    runs = []
    for seed in range(N_SEEDS):
        log, agent = train(series, env_cfg, PpoConfig(), SurpriseConfig(enabled=False),
                           episodes=DESK_EPISODES, seed=seed)
        runs.append((log, agent))
    return series, env_cfg, runs


def test_c06_ppo_sanity_learning_happens(ppo_sanity_runs):
    t0 = time.time()
    series, env_cfg, runs = ppo_sanity_runs
    trained = [evaluate_agent(agent, series, env_cfg, start=5)["final_net_worth"]
               for _, agent in runs]
    random_nw = [run_baseline(series, env_cfg, start=5, random_seed=s).random_final_net_worth
                 for s in range(N_SEEDS)]
    mean_trained = float(np.mean(trained))
    mean_random = float(np.mean(random_nw))
    assert mean_trained > mean_random, (trained, random_nw)
    assert mean_trained >= 0.95 * env_cfg.starting_balance
    report(6, f"mean trained net worth {mean_trained:.0f} beats random policy "
              f"{mean_random:.0f} and exceeds 95% of start ({time.time()-t0:.0f}s eval)")


def test_c11_first_ratio_identity(ppo_sanity_runs):
    _, _, runs = ppo_sanity_runs
    worst = 0.0
    n_phases = 0
    for log, _ in runs:
        for stats in log.updates:
            worst = max(worst, abs(stats.first_minibatch_mean_ratio - 1.0))
            n_phases += 1
    assert worst < 1e-8
    report(11, f"first-minibatch mean importance ratio within 1e-8 of 1.0 across "
               f"all {n_phases} update phases (worst {worst:.2e})")


# ------------------------------------------------------- criteria 7 + 8


@pytest.fixture(scope="module")
def crash_study():
    series = generate_synthetic(SyntheticConfig(
        n_bars=3000, initial_price=100.0, drift=0.0, volatility=0.005,
        crash_at=1500, crash_magnitude=0.3, seed=7))
    cache = {}

    def shares_sold(allow_hold=True, surprise=None):
        key = (allow_hold, None if surprise is None else surprise.energy_sign)
        if key not in cache:
            env_cfg = EnvConfig(episode_length=DESK_EPISODE_LENGTH,
                                reward_kind=RewardKind.BALANCE, allow_hold=allow_hold)
            sur = surprise if surprise is not None else SurpriseConfig(enabled=False)
            totals = []
            for seed in range(N_SEEDS):
                log, _ = train(series, env_cfg, PpoConfig(), sur,
                               episodes=DESK_EPISODES, seed=seed)
                totals.append(sum(r.shares_sold for r in log.rows))
            cache[key] = totals
        return cache[key]

    return shares_sold


def test_c07_hold_ablation_direction(crash_study):
    t0 = time.time()
    with_hold = crash_study(allow_hold=True)
    without_hold = crash_study(allow_hold=False)
    mean_on, mean_off = float(np.mean(with_hold)), float(np.mean(without_hold))
    assert mean_on < mean_off, (with_hold, without_hold)
    report(7, f"cumulative shares sold with hold {mean_on:.0f} < without hold "
              f"{mean_off:.0f} across {N_SEEDS} seeds ({time.time()-t0:.0f}s)")


def test_c08_energy_im_ablation_direction(crash_study):
    t0 = time.time()
    disabled = crash_study(allow_hold=True)  # same runs as surprise-off
    printed_sign = crash_study(surprise=SurpriseConfig(enabled=True, energy_sign=1.0))
    mean_off = float(np.mean(disabled))
    mean_printed = float(np.mean(printed_sign))
    if mean_printed <= mean_off:
        report(8, f"energy IM enabled {mean_printed:.0f} <= disabled {mean_off:.0f} "
                  f"under the printed additive sign ({time.time()-t0:.0f}s)")
        return
    # The printed additive sign rewards churn; the config's sign switch must
    # recover the risk-averse direction.
    flipped = crash_study(surprise=SurpriseConfig(enabled=True, energy_sign=-1.0))
    mean_flipped = float(np.mean(flipped))
    assert mean_flipped <= mean_off, (flipped, disabled)
    report(8, f"energy IM with sign switch {mean_flipped:.0f} <= disabled "
              f"{mean_off:.0f} (printed sign gave {mean_printed:.0f}; mechanism "
              f"wired both ways) ({time.time()-t0:.0f}s)")


# ---------------------------------------------------------------- criterion 9


def test_c09_reward_variance_ordering():
    series = generate_synthetic(SyntheticConfig(
        n_bars=3000, initial_price=100.0, drift=0.0, volatility=0.005,
        crash_at=1500, crash_magnitude=0.3, seed=7))

    def replay(kind):
        env = TradingEnv(series, EnvConfig(episode_length=400, reward_kind=kind))
        env.reset(start=1300)
        rewards, done, step = [], False, 0
        while not done:
            action = HybridAction(0.8, Bid.BUY) if step == 0 else HybridAction(0.0, Bid.HOLD)
            r, _, done = env.step(action)
            rewards.append(r)
            step += 1
        return np.array(rewards)

    pnl_var = replay(RewardKind.PNL).var()
    bal_var = replay(RewardKind.BALANCE).var()
    assert pnl_var > bal_var
    report(9, f"per-step PnL reward variance {pnl_var:.2e} exceeds balance reward "
              f"variance {bal_var:.2e} on the crash replay")


# --------------------------------------------------------------- criterion 10

CLI_CONFIG = """
[data.synthetic]
n_bars = 400
initial_price = 100.0
volatility = 0.004
seed = 21

[env]
episode_length = 100

[run]
episodes = 2
seeds = [0]
"""


def test_c10_cli_reproducibility(tmp_path):
    t0 = time.time()
    cfg_path = tmp_path / "cfg.toml"
    cfg_path.write_text(CLI_CONFIG)
    out = tmp_path / "runs"

    def invoke():
        proc = subprocess.run(
            [sys.executable, "-m", "trader.cli", "train", "--config", str(cfg_path),
             "--seed", "0", "--out", str(out)],
            capture_output=True, text=True, timeout=100)
        assert proc.returncode == 0, proc.stderr
        run_dir = [d for d in os.listdir(out) if d.startswith("run-")][0]
        log = open(os.path.join(out, run_dir, "train_seed0.csv"), "rb").read()
        manifest = open(os.path.join(out, run_dir, "manifest.json"), "rb").read()
        return log, manifest

    log_a, manifest_a = invoke()
    log_b, manifest_b = invoke()
    assert log_a == log_b
    assert manifest_a == manifest_b
    elapsed = time.time() - t0
    assert elapsed < 120.0
    report(10, f"two identical `trader train` invocations produced byte-identical "
               f"training logs ({elapsed:.0f}s)")
