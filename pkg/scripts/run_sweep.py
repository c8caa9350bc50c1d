#!/usr/bin/env python3
"""Run a config through the bench harness and print the regret medians.

    python3 scripts/run_sweep.py configs/desk.cfg
"""
import argparse
import statistics
import sys
from pathlib import Path

from cilo.bench import csv_digest, emit_plot_data, load_config, run_experiments


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    if args.workers:
        cfg.workers = args.workers
    Path(cfg.output_path).parent.mkdir(parents=True, exist_ok=True)

    def progress(recs):
        r = recs[0]
        print(f"s={r.s} trial={r.trial_id} " + " ".join(f"{x.method}={x.test_regret:.4g}" for x in recs), flush=True)

    records = run_experiments(cfg, progress)
    emit_plot_data(records, cfg.plot_file)
    print("\nmedian test regret")
    for s in cfg.s_levels:
        cells = []
        for method in ("slo", "spo_plus", "cilo"):
            vals = [r.test_regret for r in records if r.s == s and r.method == method]
            cells.append(f"{method}={statistics.median(vals):.3f}" if vals else f"{method}=n/a")
        print(f"  s={s:<3d} " + "  ".join(cells))
    print(f"digest {csv_digest(cfg.output_path)}")
    return 2 if any(r.method == "error" for r in records) else 0


if __name__ == "__main__":
    sys.exit(main())
