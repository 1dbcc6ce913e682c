"""Certified fraction lb / cost per Gauss-Newton iteration over seeded trials.

    python scripts/certificates.py --sigma 0.03 --trials 500 --iters 5
"""
import argparse

import numpy as np

from phasesync_se.harness import TrialConfig, run_trials


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--case", default="case1354pegase")
    ap.add_argument("--sigma", type=float, default=0.03)
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--iters", type=int, default=5)
    ap.add_argument("--seed", type=int, default=2025)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = TrialConfig(case=args.case, sigma_noise=args.sigma, trials=args.trials, seed=args.seed,
                      iterations=args.iters, certify=True, workers=args.workers)
    res = [r for r in run_trials(cfg) if r.ok]
    print(f"{'iter':>4} {'median %':>14} {'min %':>14} {'median delta/cost':>18}")
    for i in range(args.iters + 1):
        ratios = np.array([r.at(r.cert_ratios, i) for r in res])
        gaps = np.array([r.at(r.costs, i) - r.at(r.lbs, i) for r in res]) / np.array([r.at(r.costs, i) for r in res])
        print(f"{i:>4} {100 * np.median(ratios):>14.8f} {100 * ratios.min():>14.8f} {np.median(gaps):>18.3e}")
    print(f"{len(res)}/{args.trials} trials ok")


if __name__ == "__main__":
    main()
