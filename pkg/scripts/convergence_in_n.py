"""Covariance discrepancy at a small and a large sample size, over several seeds.

The corrected prediction should fit better at the larger n in most reruns.
"""

import argparse

from treespace.clt import load_config, run_clt_experiment

from _common import CONFIGS


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(CONFIGS / "thm2_cone.json"))
    p.add_argument("--small", type=int, default=200)
    p.add_argument("--large", type=int, default=2000)
    p.add_argument("--replicates", type=int, default=400)
    p.add_argument("--seeds", type=int, default=20)
    args = p.parse_args()
    wins = 0
    for seed in range(args.seeds):
        errs = []
        for n in (args.small, args.large):
            cfg = load_config(args.config)
            cfg.n, cfg.replicates, cfg.seed = n, args.replicates, seed
            errs.append(run_clt_experiment(cfg).discrepancy["frobenius_vs_prediction"])
        wins += errs[1] <= errs[0]
        print(f"seed {seed}: n={args.small} {errs[0]:.4f}  n={args.large} {errs[1]:.4f}", flush=True)
    print(f"large n at least as good in {wins}/{args.seeds} reruns")


if __name__ == "__main__":
    main()
