#!/usr/bin/env python3
"""Run the toy training harness from a JSON config and write the per-step
trajectory CSV plus a selection summary.

Usage:
    python3 scripts/run_toy_training.py [--config configs/toy_default.json]
                                        [--out trajectory.csv] [--seed N]
"""
import argparse
import sys

from ssnorm.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/toy_default.json")
    parser.add_argument("--out", default="trajectory.csv")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()
    argv = ["train", "--config", args.config, "--out", args.out]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
