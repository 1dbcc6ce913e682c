"""Cramer-Rao scale of the angular error for the exact-magnitude angle problem.

The efficient-estimator covariance is sigma^2 (J^T J)^{-1}, with J the angle
Jacobian at the true state. Sampling from it predicts the distribution of
max_k |theta_k - theta_k^true| that any unbiased estimator can reach.

    python scripts/crb.py --sigma 0.04
"""
import argparse

import numpy as np

from phasesync_se.estimator import VoltageState, linearize
from phasesync_se.harness import ground_truth
from phasesync_se.measurement import MeasurementPlan, simulate
from phasesync_se.netmodel import load_case


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--case", default="case1354pegase")
    ap.add_argument("--sigma", type=float, default=0.04)
    ap.add_argument("--plan", choices=["bus", "all"], default="bus")
    ap.add_argument("--draws", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    net = load_case(args.case)
    v = ground_truth(net)
    ms = simulate(net, v, MeasurementPlan.named(args.plan), 0.0, 0)
    J = linearize(net, ms, VoltageState.from_voltage(v), "angles").J.toarray()
    C = args.sigma ** 2 * np.linalg.inv(J.T @ J)
    sd = np.rad2deg(np.sqrt(np.diag(C)))
    L = np.linalg.cholesky(C)
    rng = np.random.default_rng(args.seed)
    mx = np.rad2deg([np.abs(L @ rng.standard_normal(len(sd))).max() for _ in range(args.draws)])
    print(f"{args.case} sigma={args.sigma} plan={args.plan}")
    print(f"per-bus angle std (deg): median {np.median(sd):.4f}  max {sd.max():.4f}")
    print(f"max angular error (deg): median {np.median(mx):.4f}  95% {np.quantile(mx, 0.95):.4f}  "
          f"max {mx.max():.4f}")


if __name__ == "__main__":
    main()
