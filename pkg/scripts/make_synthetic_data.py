#!/usr/bin/env python3
"""Write the synthetic stand-in for the monthly bond/stock history.

The real input is a Shiller-style file the user converts themselves. This
script produces a file of the same shape (1901-01 .. 2022-06, 1458 months)
from a two-regime Gaussian model so the whole pipeline runs out of the box:

    calm:       stock N(1.0%, 3.5%),   bond N(0.35%, 1.2%),  corr +0.1
    turbulent:  stock N(-0.4%, 7.5%),  bond N(0.45%, 2.5%),  corr -0.1
    P(calm -> turbulent) = 0.02, P(turbulent -> calm) = 0.08 per month

Numbers are loose long-run US magnitudes, not a fit to any dataset.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

REGIMES = {
    # (mu_bond, mu_stock, sd_bond, sd_stock, corr)
    0: (0.0035, 0.010, 0.012, 0.035, 0.1),
    1: (0.0045, -0.004, 0.025, 0.075, -0.1),
}
SWITCH = {0: 0.02, 1: 0.08}


def generate(seed: int, start=(1901, 1), end=(2022, 6)):
    rng = np.random.default_rng(seed)
    n = (end[0] - start[0]) * 12 + (end[1] - start[1]) + 1
    state = 0
    rows = []
    for i in range(n):
        mb, ms, sb, ss, rho = REGIMES[state]
        z1, z2 = rng.standard_normal(2)
        bond = mb + sb * z1
        stock = ms + ss * (rho * z1 + np.sqrt(1 - rho * rho) * z2)
        y, m = divmod(start[0] * 12 + start[1] - 1 + i, 12)
        rows.append((f"{y:04d}-{m + 1:02d}", round(bond, 6), round(stock, 6)))
        if rng.random() < SWITCH[state]:
            state = 1 - state
    return rows


def write(rows, path: Path):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "bond_return", "stock_return"])
        w.writerows(rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=20230901)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rows = generate(args.seed)
    write(rows, args.out / "synthetic_monthly.csv")
    write(rows[:36], args.out / "sample_returns.csv")
    print(f"wrote {len(rows)} months to {args.out / 'synthetic_monthly.csv'}")


if __name__ == "__main__":
    main()
