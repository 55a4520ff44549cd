#!/usr/bin/env python3
"""Sweep the step at which the radius schedule reaches the inscribed
radius and report the final train accuracy for each variant.

Usage:
    python3 scripts/schedule_sweep.py [--config configs/toy_default.json]
                                      [--epochs 80]
                                      [--fractions 0.4 0.5 0.6 0.7]
"""
import argparse
import json
import math
import sys

from ssnorm.training import (OptimizerConfig, ToyModelConfig,
                             make_synthetic_dataset,
                             schedule_insensitivity_experiment)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/toy_default.json")
    parser.add_argument("--epochs", type=int, default=80)
    parser.add_argument("--fractions", type=float, nargs="+",
                        default=[0.4, 0.5, 0.6, 0.7])
    args = parser.parse_args()

    with open(args.config) as fh:
        raw = json.load(fh)
    model = ToyModelConfig(**{**raw["model"],
                              "omega": tuple(raw["model"]["omega"])})
    opt = OptimizerConfig(**{**raw["optimizer"], "epochs": args.epochs})
    data_cfg = raw.get("data", {})
    data = make_synthetic_dataset(
        model.seed, int(data_cfg.get("n_samples", 200)),
        (model.channels, model.height, model.width), model.n_classes,
        float(data_cfg.get("separation", 2.0)),
        float(data_cfg.get("noise", 1.0)))

    n = data[0].shape[0]
    total = args.epochs * math.ceil(n / model.batch_size)
    ri_steps = [int(f * total) for f in args.fractions]
    accs = schedule_insensitivity_experiment(model, opt, data, ri_steps)
    result = {
        "total_steps": total,
        "runs": [{"fraction": f, "ri_step": s, "accuracy": a}
                 for f, s, a in zip(args.fractions, ri_steps, accs)],
        "spread_pp": (max(accs) - min(accs)) * 100.0,
    }
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
