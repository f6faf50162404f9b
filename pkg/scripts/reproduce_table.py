#!/usr/bin/env python3
"""Train the agent (unless a checkpoint exists) and build the seven-protocol table.

    python3 scripts/reproduce_table.py                      # bundled stand-in data
    python3 scripts/reproduce_table.py --data my_returns.csv --out runs/real

Training 200k episodes takes about 10-15 minutes on one core.
"""

import argparse
import sys
from pathlib import Path

from gbwm.cli import main as gbwm


def run(*args) -> None:
    print("$ gbwm " + " ".join(args), flush=True)
    if gbwm(list(args)) != 0:
        sys.exit(1)


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", default="data/synthetic_monthly.csv")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--episodes", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--count", type=int, default=10_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--retrain", action="store_true", help="train even if the checkpoint exists")
    return p.parse_args(argv)


def main(argv=None) -> None:
    args = parse_args(argv)
    out = Path(args.out)
    ckpt = out / "rl_policy.json"
    if args.retrain or not ckpt.is_file():
        run("train", "--data", args.data, "--episodes", str(args.episodes), "--seed", str(args.seed), "--out", str(ckpt), "-v")
    run("table", "--data", args.data, "--checkpoint", str(ckpt), "--count", str(args.count),
        "--workers", str(args.workers), "--out", str(out / "table.csv"))


if __name__ == "__main__":
    main()
