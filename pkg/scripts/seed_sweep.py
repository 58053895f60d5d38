"""How often each toy-direction check holds over many seeds.

The acceptance checks use 5 seeds; this estimates the per-seed rate behind them.

    python scripts/seed_sweep.py --runs 30
"""

import argparse

import numpy as np

from soc_ensemble.experiments import toy_bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    result = toy_bench(seed=args.seed, n_runs=args.runs)
    extrap, hetero, ens_vs_single = [], [], []
    for r in result.runs:
        e = r.extrapolation["ensemble"]
        extrap.append(e["sigma_mean_x4_6"] > e["sigma_mean_xm2_2"])
        left, right = e["sigma_mean_xm2.5_m0.5"], e["sigma_mean_x0.5_2.5"]
        hetero.append(left > right and 1.5 <= left <= 6 and 0.5 <= right <= 2)
        ens_vs_single.append(r.table["ensemble_nll"][0] <= np.median(r.member_nlls))
    for name, hits in (("extrapolation", extrap), ("heteroscedasticity", hetero),
                       ("ensemble <= median member", ens_vs_single)):
        rate = np.mean(hits)
        print(f"{name:28s} {sum(hits):3d}/{len(hits)}  rate {rate:.2f}")


if __name__ == "__main__":
    main()
