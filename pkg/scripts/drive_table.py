"""NLL- vs MSE-trained models on simulated drives, in the 'mean ± std' table layout.

    python scripts/drive_table.py --runs 5 --duration 7200
"""

import argparse
import json
from pathlib import Path

from soc_ensemble.ensemble import EnsembleConfig
from soc_ensemble.evaluation import render_table
from soc_ensemble.experiments import (DRIVE_BENCH_DURATION_S, DRIVE_BENCH_ITERATIONS,
                                      DRIVE_BENCH_LR, drive_bench)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--duration", type=float, default=DRIVE_BENCH_DURATION_S, help="seconds")
    ap.add_argument("--iterations", type=int, default=DRIVE_BENCH_ITERATIONS)
    ap.add_argument("--lr", type=float, default=DRIVE_BENCH_LR)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", help="optional directory for table.txt and summary.json")
    args = ap.parse_args()

    cfg = EnsembleConfig(iterations=args.iterations, lr=args.lr)
    result = drive_bench(cfg, seed=args.seed, n_runs=args.runs, duration_s=args.duration,
                         jobs=args.jobs)
    table = render_table(result.reports())
    print(table)
    wins = sum(r.table["ensemble_nll"][0] < r.table["ensemble_mse"][0] for r in result.runs)
    print(f"NLL-trained ensemble has the lower NLL in {wins}/{len(result.runs)} runs")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.txt").write_text(table, encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(result.summary(), indent=2) + "\n",
                                          encoding="utf-8")


if __name__ == "__main__":
    main()
