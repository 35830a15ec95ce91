"""Online MSE against the number of experts on a stream with two superposed periods."""

import argparse
from dataclasses import dataclass, replace

from e3cast.engine import EngineConfig, online_run, pretrain
from e3cast.synthetic import superposed


@dataclass
class Experiment:
    n_rows: int = 2400
    offline_rows: int = 1200
    periods: tuple = (10.0, 64.0)
    noise: float = 0.1
    engine: EngineConfig = EngineConfig(
        lookback=96, horizon=12, patch_sizes=(8, 16, 32, 48), d_model=16, d_head=8, n_heads=2, d_ff=32, n_layers=1, epochs=10, offline_stride=2
    )


def online_mse(exp: Experiment, seed: int, patch_sizes) -> float:
    tr = superposed(exp.n_rows, periods=exp.periods, noise=exp.noise, seed=seed)
    st = pretrain(tr.slice(0, exp.offline_rows), replace(exp.engine, seed=seed, patch_sizes=tuple(patch_sizes)))
    return online_run(st, tr.slice(exp.offline_rows, exp.n_rows)).metrics.mse


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--ensemble", choices=("os", "ftpl", "none"), default="os")
    args = ap.parse_args()
    exp = Experiment()
    exp.engine = replace(exp.engine, ensemble=args.ensemble)
    P = exp.engine.patch_sizes
    for seed in range(args.seeds):
        singles = {p: online_mse(exp, seed, (p,)) for p in P}
        sweep = [singles[P[0]]] + [online_mse(exp, seed, P[:k]) for k in range(2, len(P) + 1)]
        print(f"seed {seed}")
        print("  single patch: " + "  ".join(f"P={p}: {v:.5f}" for p, v in singles.items()))
        print("  experts 1..d: " + "  ".join(f"{k + 1}: {v:.5f}" for k, v in enumerate(sweep)))


if __name__ == "__main__":
    main()
