"""Post-shift online MSE with and without the adapter on a level-shift stream."""

import argparse
from dataclasses import dataclass, replace

import numpy as np

from e3cast.engine import EngineConfig, online_run, pretrain
from e3cast.synthetic import level_shift


@dataclass
class Experiment:
    n_rows: int = 2400
    offline_rows: int = 1000
    shift_at: int = 1600
    shift: float = 3.0
    engine: EngineConfig = EngineConfig(
        lookback=96, horizon=12, patch_sizes=(8, 16, 32, 48), d_model=16, d_head=8, n_heads=2, d_ff=32, n_layers=1, epochs=5, offline_stride=2
    )


def run(exp: Experiment, seed: int, disable_adapter: bool) -> np.ndarray:
    tr = level_shift(exp.n_rows, shift_at=exp.shift_at, shift=exp.shift, seed=seed)
    st = pretrain(tr.slice(0, exp.offline_rows), replace(exp.engine, seed=seed, disable_adapter=disable_adapter))
    res = online_run(st, tr.slice(exp.offline_rows, exp.n_rows))
    anchors = np.array([s.anchor for s in res.steps]) + exp.offline_rows
    return np.array(res.metrics.per_step_losses)[anchors >= exp.shift_at]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=5)
    args = ap.parse_args()
    exp = Experiment()
    exp.engine = replace(exp.engine, epochs=args.epochs)
    print(f"{'seed':>4} {'adapter on':>12} {'adapter off':>12} {'on < off':>9}")
    for seed in range(args.seeds):
        on, off = run(exp, seed, False).mean(), run(exp, seed, True).mean()
        print(f"{seed:>4} {on:>12.6f} {off:>12.6f} {str(on < off):>9}")


if __name__ == "__main__":
    main()
