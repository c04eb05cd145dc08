#!/usr/bin/env python3
"""Paired comparison of gradient-variance traces with and without control
variates, on the reference synthetic benchmark.

Writes one CSV per arm (plain/cv) and prints windowed trace summaries.

Usage:
    python3 scripts/variance_study.py --n 300 --S 200 --seeds 3 --out-dir out/
"""

import argparse
import os
from dataclasses import replace


from vbnn.data import REFERENCE_TRUTH, generate_synthetic
from vbnn.metrics import gradient_variance_profile
from vbnn.model import NetworkShape, PriorConfig
from vbnn.optimizer import Schedule, TrainConfig, save_report_csv, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--S", type=int, default=200)
    ap.add_argument("--seeds", type=int, default=3, help="number of paired seeds")
    ap.add_argument("--max-iters", type=int, default=400)
    ap.add_argument("--window", type=int, default=50)
    ap.add_argument("--out-dir", default="variance_study_out")
    args = ap.parse_args()

    shape = NetworkShape(p=2, k=3)
    prior = PriorConfig.standard(shape.K)
    base = TrainConfig(
        S=args.S,
        schedule=Schedule(kind="rm", rho0=1.0, b=100.0, c=0.3),
        grad_clip=10.0,
        max_iters=args.max_iters,
        conv_window=args.window,
    )
    os.makedirs(args.out_dir, exist_ok=True)

    for seed in range(args.seeds):
        data = generate_synthetic(REFERENCE_TRUTH, args.n, seed=1000 + seed)
        print(f"\n=== seed {seed} (n={args.n}, S={args.S}) ===")
        means = {}
        for label, use_cv in (("plain", False), ("cv", True)):
            config = replace(base, seed=seed, use_control_variates=use_cv)
            _, report = train(data, prior, shape, config)
            path = os.path.join(args.out_dir, f"trace_{label}_seed{seed}.csv")
            save_report_csv(report, path)
            means[label] = float(report.grad_var_trace.mean())
            profile = gradient_variance_profile(report, window=args.window)
            print(f"{label:>6}: {report.iterations_run} iters, "
                  f"mean grad var {means[label]:.3e}")
            for start, value in profile:
                print(f"        window@{int(start):4d}: {value:.3e}")
        print(f"  variance ratio cv/plain = {means['cv'] / means['plain']:.4f}")


if __name__ == "__main__":
    main()
