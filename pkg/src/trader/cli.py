"""Command-line entry points: train, evaluate, baseline, ablate, gen-data."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .agent import TraderAgent
from .harness import (AblationKind, AblationSpec, evaluate_agent, load_run_config,
                      run_baseline, run_ablation, run_training)
from .market_data import SyntheticConfig, generate_synthetic, save_csv

GEN_PRESETS = {
    "crash": dict(n_bars=3000, initial_price=100.0, drift=0.0, volatility=0.005,
                  crash_at=1500, crash_magnitude=0.3),
    "trend": dict(n_bars=2000, initial_price=100.0, drift=0.0005, volatility=0.005),
    "flat": dict(n_bars=2000, initial_price=100.0, drift=0.0, volatility=0.0),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trader",
        description="Hierarchical RL trade execution: training, evaluation and ablations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one seed from a config file")
    p_train.add_argument("--config", required=True, help="TOML or JSON run config")
    p_train.add_argument("--seed", required=True, type=int, help="training seed")
    p_train.add_argument("--out", required=True, help="output directory for logs/manifest")
    p_train.add_argument("--checkpoint-every", type=int, default=0,
                         help="also snapshot the agent every N episodes")

    p_eval = sub.add_parser("evaluate", help="deterministic episode from a checkpoint")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint JSON written by train")
    p_eval.add_argument("--start", type=int, default=5, help="episode start bar index")
    p_eval.add_argument("--out", default=None, help="optional JSON report path")

    p_base = sub.add_parser("baseline", help="buy-and-hold and random-policy baselines")
    p_base.add_argument("--config", required=True)
    p_base.add_argument("--seed", type=int, default=0, help="random-policy seed")
    p_base.add_argument("--start", type=int, default=5)
    p_base.add_argument("--out", default=None, help="optional JSON report path")

    p_abl = sub.add_parser("ablate", help="run one ablation suite over the config's seeds")
    p_abl.add_argument("--suite", required=True,
                       choices=[k.value for k in AblationKind])
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--out", required=True, help="output directory for the suite CSV")

    p_gen = sub.add_parser("gen-data", help="write a synthetic OHLCV CSV")
    p_gen.add_argument("--synthetic", required=True, choices=sorted(GEN_PRESETS),
                       help="price-path preset")
    p_gen.add_argument("--out", required=True, help="CSV path to write")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--bars", type=int, default=None, help="override preset length")
    return parser


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config, out_dir=args.out, seeds=(args.seed,))
    result = run_training(cfg, checkpoint_every=args.checkpoint_every)
    print(f"wrote {result['logs'][args.seed]}")
    print(f"manifest: {result['manifest']}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config)
    with open(args.checkpoint, encoding="utf-8") as fh:
        ckpt = json.load(fh)
    agent = TraderAgent.from_dict(ckpt["agent"])
    series = cfg.load_series()
    report = evaluate_agent(agent, series, cfg.env, start=args.start)
    report["symbol"] = series.symbol
    report["start"] = args.start
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def _cmd_baseline(args) -> int:
    cfg = load_run_config(args.config)
    series = cfg.load_series()
    result = run_baseline(series, cfg.env, start=args.start, random_seed=args.seed)
    report = {k: getattr(result, k) for k in (
        "symbol", "series_len", "episode_length", "start",
        "buy_hold_max_profit", "buy_hold_final_profit",
        "random_max_profit", "random_final_profit", "random_shares_sold")}
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, out_dir=args.out)
    spec = AblationSpec(kind=AblationKind(args.suite))
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, f"ablation_{args.suite}.csv")
    run_ablation(spec, cfg, out_path)
    print(f"wrote {out_path}")
    return 0


def _cmd_gen_data(args) -> int:
    preset = dict(GEN_PRESETS[args.synthetic])
    if args.bars is not None:
        preset["n_bars"] = args.bars
        if preset.get("crash_at") is not None:
            preset["crash_at"] = args.bars // 2
    series = generate_synthetic(SyntheticConfig(seed=args.seed, **preset))
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    save_csv(series, args.out)
    print(f"wrote {args.out} ({len(series)} bars)")
    return 0


COMMANDS = {
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "baseline": _cmd_baseline,
    "ablate": _cmd_ablate,
    "gen-data": _cmd_gen_data,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
