"""Mini ablation grid: every suite at toy scale, written as long-format CSV.

Takes about a minute. Run: python demos/06_ablation_grid.py
"""

import os
import tempfile
from collections import defaultdict

from trader.env import EnvConfig
from trader.harness import (AblationKind, AblationSpec, RunConfig, read_ablation_csv,
                            run_ablation)
from trader.market_data import SyntheticConfig

base = RunConfig(
    data=SyntheticConfig(n_bars=600, initial_price=100.0, volatility=0.006,
                         crash_at=300, crash_magnitude=0.2, seed=7),
    env=EnvConfig(episode_length=100),
    episodes=2,
    seeds=(0, 1),
    out_dir="unused",
)

with tempfile.TemporaryDirectory() as tmp:
    for kind in AblationKind:
        out = os.path.join(tmp, f"ablation_{kind.value}.csv")
        run_ablation(AblationSpec(kind), base, out)
        rows = read_ablation_csv(out)
        by_variant = defaultdict(list)
        for variant, _seed, _episode, norm_ret, shares in rows:
            by_variant[variant].append((norm_ret, shares))
        print(f"{kind.value} suite: {len(rows)} rows "
              f"(= {len(by_variant)} variants x {len(base.seeds)} seeds x {base.episodes} episodes)")
        for variant, vals in by_variant.items():
            mean_ret = sum(v[0] for v in vals) / len(vals)
            mean_sold = sum(v[1] for v in vals) / len(vals)
            print(f"  {variant:<16} mean normalized return {mean_ret:+.3f} "
                  f"mean shares sold {mean_sold:8.1f}")
