"""Regret of EGD and FTPL on a stream of biased experts with shared noise."""

import argparse

import numpy as np

from e3cast.ensembler import EgdState, FtplState, RegretLedger, egd_update, ftpl_accumulate, ftpl_select, regret_report


def stream(T: int, seed: int, bias=(0.8, 0.2, 1.2, 0.5), noise=0.5):
    r = np.random.default_rng(seed)
    return np.asarray(bias)[None, :] + r.normal(0.0, noise, (T, 1))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--csv", help="write the regret curves of the first seed here")
    args = ap.parse_args()
    for seed in range(args.seeds):
        errs = stream(args.steps, seed)
        egd, ftpl = EgdState.uniform(errs.shape[1]), FtplState.fresh(errs.shape[1], seed=seed)
        le, lf = RegretLedger(), RegretLedger()
        for err in errs:
            losses = err**2
            le.record(float((egd.w @ err) ** 2), losses)
            lf.record(float(losses[ftpl_select(ftpl)]), losses)
            egd, ftpl = egd_update(egd, losses), ftpl_accumulate(ftpl, losses)
        a, b = regret_report(le), regret_report(lf)
        print(f"seed {seed}: EGD regret {a.curve[-1]:.3f} slope {a.slope:.3f}  FTPL regret {b.curve[-1]:.3f} slope {b.slope:.3f}")
        if args.csv and seed == 0:
            np.savetxt(args.csv, np.column_stack([np.arange(1, args.steps + 1), a.curve, b.curve]), delimiter=",",
                       header="step,egd_regret,ftpl_regret", comments="")


if __name__ == "__main__":
    main()
