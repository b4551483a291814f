"""Shared plumbing for the experiment scripts."""

import argparse
import os
from pathlib import Path

from treespace.clt import histogram_csv, load_config, residuals_csv, run_clt_experiment

HERE = Path(__file__).resolve().parent
CONFIGS = HERE / "configs"


def parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--replicates", type=int, help="override the configured replicate count")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=str(HERE / "results"), help="directory for reports")
    return p


def run(config_name, args, progress=True):
    cfg = load_config(str(CONFIGS / config_name))
    if args.replicates:
        cfg.replicates = args.replicates
    if args.seed is not None:
        cfg.seed = args.seed
    def tick(i, total):
        if i % max(1, total // 10) == 0:
            print(f"  {config_name}: {i}/{total}", flush=True)

    report = run_clt_experiment(cfg, progress=tick if progress else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / Path(config_name).stem
    Path(f"{stem}_report.json").write_text(report.to_json() + "\n")
    Path(f"{stem}_residuals.csv").write_text(residuals_csv(report))
    Path(f"{stem}_histogram.csv").write_text(histogram_csv(report, cfg.histogram_bins, cfg.seed))
    return report


def threads_note():
    cap = os.environ.get("TREESPACE_THREADS")
    return f"TREESPACE_THREADS={cap}" if cap else f"{os.cpu_count()} cores"
