"""Angular-error statistics (median / max over trials) at a fixed noise level.

    python scripts/accuracy.py --sigma 0.04 --trials 500 --iters 1
"""
import argparse
import json
import time

from phasesync_se.harness import TrialConfig, run_trials, summarize


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--case", default="case1354pegase")
    ap.add_argument("--sigma", type=float, default=0.04)
    ap.add_argument("--delta-u", type=float, default=0.0)
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--iters", type=int, default=1)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args()

    cfg = TrialConfig(case=args.case, sigma_noise=args.sigma, delta_u=args.delta_u, trials=args.trials,
                      seed=args.seed, iterations=args.iters, certify=False, workers=args.workers)
    t0 = time.perf_counter()
    stats = summarize(run_trials(cfg), [i for i in (0, 1, 5, 10) if i <= args.iters])
    print(f"{args.case}  sigma={args.sigma}  delta_u={args.delta_u}  trials={args.trials}  "
          f"({time.perf_counter() - t0:.0f}s)")
    print(f"{'iter':>4} {'median deg':>11} {'max deg':>9} {'failed':>6}")
    for s in stats:
        print(f"{s.iteration:>4} {s.median_ang_err_deg:>11.4f} {s.max_ang_err_deg:>9.4f} {s.failures:>6}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump([s.__dict__ for s in stats], fh, indent=2)


if __name__ == "__main__":
    main()
