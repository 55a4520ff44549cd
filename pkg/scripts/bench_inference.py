#!/usr/bin/env python3
"""Time the eval-mode forward pass with all statistics mixed versus a
one-hot (single-normalizer) selection.

Usage:
    python3 scripts/bench_inference.py [--dims 32x64x56x56] [--reps 50]
"""
import argparse
import sys

from ssnorm.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dims", default="32x64x56x56")
    parser.add_argument("--reps", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    return cli_main(["bench", "--dims", args.dims, "--reps", str(args.reps),
                     "--seed", str(args.seed)])


if __name__ == "__main__":
    sys.exit(main())
