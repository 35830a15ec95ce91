"""Cold-start transfer: pretrain on one regime, run online on another, compare with a frozen model."""

import argparse
from dataclasses import dataclass, replace

import numpy as np

from e3cast.engine import EngineConfig, online_run, pretrain
from e3cast.synthetic import transfer_pair


@dataclass
class Experiment:
    source_rows: int = 1200
    events: int = 200
    target_period: float = 30.0
    engine: EngineConfig = EngineConfig(
        lookback=96, horizon=12, patch_sizes=(8, 16, 32, 48), d_model=16, d_head=8, n_heads=2, d_ff=32, n_layers=1, epochs=10, offline_stride=2
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--target-period", type=float, default=30.0)
    args = ap.parse_args()
    exp = Experiment(target_period=args.target_period)
    L, H = exp.engine.lookback, exp.engine.horizon
    print(f"{'seed':>4} {'adapted':>10} {'no adapter':>10} {'frozen':>10} {'ratio':>7}")
    for seed in range(args.seeds):
        src, tgt = transfer_pair(exp.source_rows, L + exp.events * H, target_period=exp.target_period, seed=seed)
        cum = {}
        for name, over in (("adapted", {}), ("no adapter", {"disable_adapter": True}), ("frozen", {"freeze": True})):
            st = pretrain(src, replace(exp.engine, seed=seed, **over))
            cum[name] = float(np.sum(online_run(st, tgt).metrics.per_step_losses))
        print(f"{seed:>4} {cum['adapted']:>10.2f} {cum['no adapter']:>10.2f} {cum['frozen']:>10.2f} {cum['adapted'] / cum['frozen']:>7.3f}")


if __name__ == "__main__":
    main()
