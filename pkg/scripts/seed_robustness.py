"""How often is the GeKo error monotone in n_z across master seeds?

Runs only the GeKo rows of the sweep for each seed and reports the mean
lifted error per state-center count.
"""

import argparse

from geko.config import load_config
from geko.experiment import run_tuple


def main():
    parser = argparse.ArgumentParser(description="GeKo monotonicity across seeds")
    parser.add_argument("--config", default="vdp_paper")
    parser.add_argument("--seeds", type=int, default=8, help="seeds 0..n-1")
    args = parser.parse_args()

    monotone = 0
    for seed in range(args.seeds):
        cfg = load_config(args.config, seed=seed)
        sweep = sorted((int(a), int(b)) for m, a, b in cfg.bench.sweep if m == "geko")
        means = []
        for n_z, n_v in sweep:
            row, _, _ = run_tuple(cfg, "geko", n_z, n_v)
            means.append(row["mean_lifted_error"] if row["status"] == "ok" else float("inf"))
        ok = all(a >= b for a, b in zip(means, means[1:]))
        monotone += ok
        print(f"seed {seed}: " + "  ".join(f"n_z={n}:{m:.4g}" for (n, _), m in zip(sweep, means)) + ("" if ok else "  <- not monotone"))
    print(f"{monotone}/{args.seeds} seeds non-increasing")


if __name__ == "__main__":
    main()
