#!/usr/bin/env python3
"""CSV inputs for the plots: benchmark sweeps, the agent's policy surface and the
spread of rolling-window mean estimates. Glide paths come with the table JSON.

    python3 scripts/figure_data.py --checkpoint runs/rl_policy.json --out runs/figures
"""

import argparse
import sys
from pathlib import Path

from gbwm.cli import main as gbwm


def run(*args) -> None:
    print("$ gbwm " + " ".join(args), flush=True)
    if gbwm(list(args)) != 0:
        sys.exit(1)


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", default="data/synthetic_monthly.csv")
    p.add_argument("--checkpoint", default="runs/rl_policy.json")
    p.add_argument("--out", default="runs/figures")
    args = p.parse_args(argv)
    out = Path(args.out)

    for strategy in ("mc", "vb"):
        run("sweep", "--data", args.data, "--strategy", strategy, "--out", str(out / f"sweep_{strategy}.csv"))
    run("spread", "--data", args.data, "--windows", "24", "36", "48", "60", "--part", "train", "--out", str(out / "mean_spread.csv"))
    if Path(args.checkpoint).is_file():
        run("policy-grid", "--checkpoint", args.checkpoint, "--out", str(out / "policy_grid.csv"))
    else:
        print(f"no checkpoint at {args.checkpoint}; skipping the policy surface", file=sys.stderr)


if __name__ == "__main__":
    main()
