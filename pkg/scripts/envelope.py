"""Power-law envelopes of the angular error.

Noise sweep: Delta_ang^(k) <= beta * sigma^p over a log-spaced sigma grid.
With --delta-u-grid, fits beta1 sigma^p + beta2 du^q to the init error.

    python scripts/envelope.py --trials 20 --csv sweep.csv
    python scripts/envelope.py --delta-u-grid 0.005:0.04:3 --sigma-grid 0.005:0.05:3
"""
import argparse

import numpy as np

from phasesync_se.harness import TrialConfig, parse_grid, power_law_fit, run_trials, sweep, write_csv
from phasesync_se.netmodel import load_case


def noise_sweep(args):
    net = load_case(args.case)
    sig, errs = [], {0: [], 1: []}
    for k, s in enumerate(parse_grid(args.sigma_grid)):
        cfg = TrialConfig(case=args.case, sigma_noise=float(s), trials=args.trials, seed=args.seed + k,
                          iterations=1, certify=False)
        for r in run_trials(cfg, net):
            if r.ok:
                sig.append(s)
                errs[0].append(r.ang_err[0])
                errs[1].append(r.at(r.ang_err, 1))
    for it, e in errs.items():
        f = power_law_fit(sig, e)
        print(f"Delta_ang^({it}) <= {f.beta_env:.4f} sigma^{f.p:.4f}   (central fit {f.beta:.4f})")
    if args.csv:
        rows = sweep(args.case, parse_grid(args.sigma_grid), 0.0, args.trials, seed=args.seed, iters=(0, 1),
                     certify=False, net=net)
        write_csv(args.csv, rows)


def magnitude_sweep(args):
    net = load_case(args.case)
    sig, du, e0 = [], [], []
    k = 0
    for s in parse_grid(args.sigma_grid):
        for d in parse_grid(args.delta_u_grid):
            cfg = TrialConfig(case=args.case, sigma_noise=float(s), delta_u=float(d), trials=args.trials,
                              seed=args.seed + k, iterations=0, certify=False)
            k += 1
            for r in run_trials(cfg, net):
                if r.ok:
                    sig.append(s)
                    du.append(d)
                    e0.append(r.ang_err[0])
    f = power_law_fit(sig, e0, du)
    print(f"Delta_ang^(0) <= {f.beta_env:.4f} sigma^{f.p:.4f} + {f.beta2_env:.4f} du^{f.q:.4f}")
    print(f"worst sample / envelope: {np.max(np.array(e0) / f.predict(sig, du, envelope=True)):.3f}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--case", default="case1354pegase")
    ap.add_argument("--sigma-grid", default="0.001:0.1:20")
    ap.add_argument("--delta-u-grid")
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=100)
    ap.add_argument("--csv")
    args = ap.parse_args()
    if args.delta_u_grid:
        magnitude_sweep(args)
    else:
        noise_sweep(args)


if __name__ == "__main__":
    main()
