"""Experiment harness: run configs, baselines, metrics and ablation grids.

All outputs are CSV plus a JSON manifest; reruns of an identical manifest
produce byte-identical files. Grid cells (variant x seed) are independent
and can run in a process pool bounded by the TRADER_THREADS env var.
"""

from __future__ import annotations

import concurrent.futures
import csv
import enum
import hashlib
import json
import os
import subprocess
from dataclasses import asdict, dataclass, replace
from typing import Optional, Union

import numpy as np

from . import __version__
from .agent import TraderAgent
from .env import Bid, EnvConfig, HybridAction, RewardKind, TradingEnv
from .market_data import PriceSeries, SyntheticConfig, generate_synthetic, load_csv
from .surprise import SurpriseConfig
from .trainer import PpoConfig, TrainingLog, train

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class SeriesMismatch(ValueError):
    pass


@dataclass(frozen=True)
class CsvSource:
    path: str
    symbol: str


DataSource = Union[CsvSource, SyntheticConfig]


@dataclass(frozen=True)
class RunConfig:
    data: DataSource
    env: EnvConfig = EnvConfig()
    ppo: PpoConfig = PpoConfig()
    surprise: SurpriseConfig = SurpriseConfig()
    episodes: int = 50
    seeds: tuple = (0,)
    out_dir: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed required")

    def load_series(self) -> PriceSeries:
        if isinstance(self.data, CsvSource):
            return load_csv(self.data.path, self.data.symbol)
        return generate_synthetic(self.data)


def _config_dict(cfg: RunConfig) -> dict:
    d = {
        "data": asdict(cfg.data),
        "data_kind": "csv" if isinstance(cfg.data, CsvSource) else "synthetic",
        "env": {**asdict(cfg.env), "reward_kind": cfg.env.reward_kind.value},
        "ppo": asdict(cfg.ppo),
        "surprise": asdict(cfg.surprise),
        "episodes": cfg.episodes,
        "seeds": list(cfg.seeds),
    }
    return d


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(_config_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def code_version() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             cwd=here, capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def load_run_config(path: str, out_dir: Optional[str] = None,
                    seeds: Optional[tuple] = None) -> RunConfig:
    """Parse a TOML or JSON run config; CLI-supplied out/seeds win."""
    with open(path, "rb") as fh:
        if path.endswith(".json"):
            raw = json.load(fh)
        else:
            raw = tomllib.load(fh)

    data_raw = raw.get("data", {})
    if "csv" in data_raw:
        data: DataSource = CsvSource(
            path=data_raw["csv"],
            symbol=data_raw.get("symbol", os.path.splitext(os.path.basename(data_raw["csv"]))[0]),
        )
    elif "synthetic" in data_raw:
        data = SyntheticConfig(**data_raw["synthetic"])
    else:
        raise ValueError("config [data] needs either 'csv' or a [data.synthetic] table")

    env_raw = dict(raw.get("env", {}))
    if "reward_kind" in env_raw:
        env_raw["reward_kind"] = RewardKind(env_raw["reward_kind"])
    env = EnvConfig(**env_raw)
    ppo = PpoConfig(**raw.get("ppo", {}))
    sur = SurpriseConfig(**raw.get("surprise", {}))
    run_raw = raw.get("run", {})
    return RunConfig(
        data=data, env=env, ppo=ppo, surprise=sur,
        episodes=int(run_raw.get("episodes", 50)),
        seeds=seeds if seeds is not None else tuple(run_raw.get("seeds", [0])),
        out_dir=out_dir if out_dir is not None else run_raw.get("out", "runs"),
    )


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("TRADER_THREADS", "1")))
    except ValueError:
        return 1


# --- baselines ---


@dataclass(frozen=True)
class BaselineResult:
    symbol: str
    series_len: int
    episode_length: int
    starting_balance: float
    start: int
    buy_hold_max_profit: float
    buy_hold_final_profit: float
    random_max_profit: float
    random_final_profit: float
    random_final_net_worth: float
    random_shares_sold: float


def _replay(env: TradingEnv, start: int, pick_action) -> tuple[float, float, float, float]:
    env.reset(start=start)
    sb = env.cfg.starting_balance
    max_profit = env.net_worth - sb
    done = False
    step = 0
    while not done:
        _, _, done = env.step(pick_action(step, env))
        max_profit = max(max_profit, env.net_worth - sb)
        step += 1
    return max_profit, env.net_worth - sb, env.net_worth, env.total_shares_sold


def run_baseline(series: PriceSeries, env_cfg: EnvConfig, start: int = 5,
                 random_seed: int = 0) -> BaselineResult:
    """Deterministic buy-and-hold plus a seeded uniform-random policy."""
    env = TradingEnv(series, env_cfg)

    def buy_hold(step, _env):
        return HybridAction(1.0, Bid.BUY) if step == 0 else HybridAction(0.0, Bid.HOLD)

    bh_max, bh_final, _, _ = _replay(env, start, buy_hold)

    rng = np.random.Generator(np.random.PCG64(random_seed))

    def random_policy(_step, _env):
        return HybridAction(float(rng.random()), Bid(int(rng.integers(0, 3))))

    r_max, r_final, r_nw, r_sold = _replay(env, start, random_policy)
    return BaselineResult(
        symbol=series.symbol, series_len=len(series),
        episode_length=env_cfg.episode_length,
        starting_balance=env_cfg.starting_balance, start=start,
        buy_hold_max_profit=bh_max, buy_hold_final_profit=bh_final,
        random_max_profit=r_max, random_final_profit=r_final,
        random_final_net_worth=r_nw, random_shares_sold=r_sold,
    )


def evaluate_agent(agent: TraderAgent, series: PriceSeries, env_cfg: EnvConfig,
                   start: int = 5) -> dict:
    """One deterministic (mean-action, argmax-bid) episode."""
    env = TradingEnv(series, env_cfg)
    obs = env.reset(start=start)
    done = False
    while not done:
        sample = agent.sample_action(obs, stochastic=False)
        _, obs, done = env.step(sample.action)
    return {
        "final_net_worth": env.net_worth,
        "profit": env.net_worth - env_cfg.starting_balance,
        "shares_sold": env.total_shares_sold,
    }


# --- metrics ---

BASELINE_PROFIT_FLOOR = 1.0  # one currency unit; guards flat-series division

METRIC_HEADER = ["run_id", "seed", "episode", "normalized_return",
                 "shares_sold_normalized", "net_worth"]


@dataclass(frozen=True)
class MetricRow:
    run_id: str
    seed: int
    episode: int
    normalized_return: float
    shares_sold_normalized: float
    net_worth: float


def normalize_returns(log: TrainingLog, baseline: BaselineResult,
                      series: PriceSeries, env_cfg: EnvConfig,
                      run_id: str = "run") -> list[MetricRow]:
    """Per-episode profits scaled by the buy-and-hold maximum profit."""
    if baseline.symbol != series.symbol or baseline.series_len != len(series):
        raise SeriesMismatch("baseline computed on a different series")
    if (baseline.episode_length != env_cfg.episode_length
            or baseline.starting_balance != env_cfg.starting_balance):
        raise SeriesMismatch("baseline computed with different episode settings")
    denom = max(BASELINE_PROFIT_FLOOR, baseline.buy_hold_max_profit)
    share_denom = max(1.0, baseline.random_shares_sold)
    return [
        MetricRow(
            run_id=run_id, seed=log.seed, episode=r.episode,
            normalized_return=(r.net_worth - env_cfg.starting_balance) / denom,
            shares_sold_normalized=r.shares_sold / share_denom,
            net_worth=r.net_worth,
        )
        for r in log.rows
    ]


def write_metrics_csv(rows: list[MetricRow], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_HEADER)
        for r in rows:
            writer.writerow([r.run_id, r.seed, r.episode, repr(r.normalized_return),
                             repr(r.shares_sold_normalized), repr(r.net_worth)])


def read_metrics_csv(path: str) -> list[MetricRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METRIC_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        return [MetricRow(r[0], int(r[1]), int(r[2]), float(r[3]), float(r[4]), float(r[5]))
                for r in reader]


# --- training runs ---


def _write_checkpoint(path: str, agent_dict: dict, cfg_hash: str, step: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"agent": agent_dict, "config_hash": cfg_hash,
                   "training_step": step}, fh)


def _run_seed(args) -> tuple[int, str]:
    cfg, seed, run_dir, checkpoint_every = args
    series = cfg.load_series()
    cfg_hash = config_hash(cfg)
    steps_per_episode = cfg.env.episode_length

    on_episode = None
    if checkpoint_every > 0:
        def on_episode(episode, agent):
            if (episode + 1) % checkpoint_every == 0:
                _write_checkpoint(
                    os.path.join(run_dir, f"checkpoint_seed{seed}_ep{episode}.json"),
                    agent.to_dict(), cfg_hash, (episode + 1) * steps_per_episode)

    log, agent = train(series, cfg.env, cfg.ppo, cfg.surprise,
                       episodes=cfg.episodes, seed=seed, on_episode=on_episode)
    log_path = os.path.join(run_dir, f"train_seed{seed}.csv")
    log.write_csv(log_path)
    _write_checkpoint(os.path.join(run_dir, f"checkpoint_seed{seed}.json"),
                      agent.to_dict(), cfg_hash, cfg.episodes * steps_per_episode)
    return seed, log_path


def run_training(cfg: RunConfig, checkpoint_every: int = 0) -> dict:
    """Train every seed; one TrainingLog CSV per seed plus a manifest.

    Returns {"run_dir": ..., "logs": {seed: csv path}, "manifest": path}.
    checkpoint_every > 0 additionally snapshots the agent every that many
    episodes. Failures leave a <seed>.FAILED marker next to any results
    already written. Seeds run in a process pool when TRADER_THREADS > 1.
    """
    run_id = f"run-{config_hash(cfg)}"
    run_dir = os.path.join(cfg.out_dir, run_id)
    os.makedirs(run_dir, exist_ok=True)
    probe = os.path.join(run_dir, ".write-probe")
    try:
        with open(probe, "w") as fh:
            fh.write("ok")
        os.remove(probe)
    except OSError as e:
        raise PermissionError(f"output directory {run_dir} not writable: {e}") from e

    manifest = {
        "run_id": run_id,
        "version": code_version(),
        "config": _config_dict(cfg),
        "logs": {str(s): f"train_seed{s}.csv" for s in cfg.seeds},
        "checkpoints": {str(s): f"checkpoint_seed{s}.json" for s in cfg.seeds},
    }
    manifest_path = os.path.join(run_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    cells = [(cfg, seed, run_dir, checkpoint_every) for seed in cfg.seeds]
    log_paths = {}
    workers = n_workers()
    try:
        if workers > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                for seed, path in pool.map(_run_seed, cells):
                    log_paths[seed] = path
        else:
            for cell in cells:
                seed, path = _run_seed(cell)
                log_paths[seed] = path
    except Exception:
        done = set(log_paths)
        for seed in cfg.seeds:
            if seed not in done:
                with open(os.path.join(run_dir, f"seed{seed}.FAILED"), "w") as fh:
                    fh.write("training failed; see traceback in caller\n")
        raise
    return {"run_dir": run_dir, "logs": log_paths, "manifest": manifest_path}


# --- ablations ---


class AblationKind(enum.Enum):
    REWARD_KIND = "reward"
    ENERGY_IM = "energy"
    HOLD_ACTION = "hold"
    STARTING_BALANCE = "balance"


@dataclass(frozen=True)
class AblationSpec:
    kind: AblationKind
    balances: tuple = (10_000.0, 20_000.0, 50_000.0)

    def variants(self, base: RunConfig) -> list[tuple[str, RunConfig]]:
        k = self.kind
        if k is AblationKind.REWARD_KIND:
            return [(f"reward-{rk.value}", replace(base, env=replace(base.env, reward_kind=rk)))
                    for rk in (RewardKind.BALANCE, RewardKind.PROFIT, RewardKind.PNL)]
        if k is AblationKind.ENERGY_IM:
            return [("im-on", replace(base, surprise=replace(base.surprise, enabled=True))),
                    ("im-off", replace(base, surprise=replace(base.surprise, enabled=False)))]
        if k is AblationKind.HOLD_ACTION:
            return [("hold-on", replace(base, env=replace(base.env, allow_hold=True))),
                    ("hold-off", replace(base, env=replace(base.env, allow_hold=False)))]
        return [(f"balance-{int(b)}",
                 replace(base, env=replace(base.env, starting_balance=b, reward_scale=None)))
                for b in self.balances]


ABLATION_HEADER = ["variant", "seed", "episode", "normalized_return", "shares_sold"]


def _ablation_cell(args) -> tuple[str, int, list[list]]:
    variant, cfg, seed = args
    series = cfg.load_series()
    log, _agent = train(series, cfg.env, cfg.ppo, cfg.surprise,
                        episodes=cfg.episodes, seed=seed)
    baseline = run_baseline(series, cfg.env)
    denom = max(BASELINE_PROFIT_FLOOR, baseline.buy_hold_max_profit)
    rows = [[variant, seed, r.episode,
             repr((r.net_worth - cfg.env.starting_balance) / denom),
             repr(r.shares_sold)] for r in log.rows]
    return variant, seed, rows


def run_ablation(spec: AblationSpec, base: RunConfig, out_path: str) -> str:
    """Train the variant grid over all seeds and emit one long-format CSV.

    Every variant sees the same seed list, so curves are seed-matched.
    """
    cells = [(variant, cfg, seed)
             for variant, cfg in spec.variants(base)
             for seed in base.seeds]
    workers = n_workers()
    results = {}
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for variant, seed, rows in pool.map(_ablation_cell, cells):
                results[(variant, seed)] = rows
    else:
        for cell in cells:
            variant, seed, rows = _ablation_cell(cell)
            results[(variant, seed)] = rows

    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_HEADER)
        for variant, _cfg, seed in ((v, c, s) for v, c in spec.variants(base) for s in base.seeds):
            for row in results[(variant, seed)]:
                writer.writerow(row)
    return out_path


def read_ablation_csv(path: str) -> list[list]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ABLATION_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        return [[r[0], int(r[1]), int(r[2]), float(r[3]), float(r[4])] for r in reader]
