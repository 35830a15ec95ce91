"""Naive, predictive and ideal autoscaling on a bursty requests/sec trace."""

import argparse
from dataclasses import dataclass

from e3cast.autoscale import SimConfig, simulate
from e3cast.engine import EngineConfig, EngineForecaster, pretrain
from e3cast.synthetic import bursty_qps


@dataclass
class Experiment:
    n_rows: int = 2600
    offline_rows: int = 2000
    sim: SimConfig = SimConfig(pod_startup_delay=60.0)
    engine: EngineConfig = EngineConfig(
        lookback=120, horizon=12, patch_sizes=(8, 16, 32, 64), d_model=16, d_head=8, n_heads=2, d_ff=32, n_layers=1, epochs=10, offline_stride=2
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    exp = Experiment()
    tr = bursty_qps(exp.n_rows, seed=args.seed)
    test = tr.slice(exp.offline_rows, exp.n_rows)
    state = pretrain(tr.slice(0, exp.offline_rows), exp.engine)
    runs = {
        "naive": simulate("naive", test, exp.sim),
        "predictive": simulate("predictive", test, exp.sim, EngineForecaster(state, tr.values, exp.sim.feedback_interval, offset=exp.offline_rows)),
        "ideal": simulate("ideal", test, exp.sim),
    }
    print(f"{'policy':<11} {'Ave-Lat':>8} {'Max-Lat':>8} {'99.9-Lat':>9} {'99-Lat':>8} {'90-Lat':>8} {'AvePod':>7} {'MaxPod':>7}")
    for name, r in runs.items():
        p = r.report
        print(f"{name:<11} {p.ave_lat:>8.2f} {p.max_lat:>8.2f} {p.p999_lat:>9.2f} {p.p99_lat:>8.2f} {p.p90_lat:>8.2f} {p.ave_pod:>7.2f} {p.max_pod:>7d}")


if __name__ == "__main__":
    main()
