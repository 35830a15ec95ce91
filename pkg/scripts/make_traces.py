"""Write the synthetic traces used in the README's CLI walkthrough."""

import argparse
from pathlib import Path

from e3cast.series import save_trace
from e3cast.synthetic import bursty_qps, level_shift, superposed, transfer_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("data"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    save_trace(superposed(2400, periods=(10.0, 64.0), seed=0), args.out / "superposed.csv")
    save_trace(level_shift(2400, shift_at=1600, shift=3.0, seed=0), args.out / "level_shift.csv")
    src, tgt = transfer_pair(1200, 96 + 200 * 12, target_period=30.0, seed=0)
    save_trace(src, args.out / "source.csv")
    save_trace(tgt, args.out / "target.csv")
    save_trace(bursty_qps(2600, seed=0), args.out / "qps.csv")
    print(f"wrote 5 traces to {args.out}")


if __name__ == "__main__":
    main()
