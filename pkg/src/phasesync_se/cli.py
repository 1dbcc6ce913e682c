"""Command-line entry point: estimate, benchmark, sweep, fixture."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .estimator import EstimatorConfig, estimate
from .harness import (REPORT_ITERS, TrialConfig, bench_timing, ground_truth, parse_grid, run_trials,
                      summarize, sweep, three_bus_fixture, write_csv)
from .hbuilder import assemble, write_matrix_market
from .measurement import MeasurementPlan, load_measurements, simulate
from .netmodel import load_case


def _dump(obj, path):
    text = json.dumps(obj, indent=2)
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        print(text)


def cmd_estimate(args):
    net = load_case(args.case)
    truth = None
    if args.measurements:
        mset = load_measurements(args.measurements, net)
        u0 = None
        try:
            truth = ground_truth(net, "case")
        except ValueError:
            pass
    else:
        truth = ground_truth(net, args.truth, args.seed)
        u_gnd = np.abs(truth)
        u0, vm_values = u_gnd, None
        if args.delta_u > 0:
            u0 = u_gnd + np.random.default_rng([args.seed, 1]).uniform(-args.delta_u, args.delta_u, net.n)
            vm_values = u0 ** 2
        mset = simulate(net, truth, MeasurementPlan.named(args.plan), args.sigma, args.seed, vm_values=vm_values)
    mode = args.gn_mode or ("angles" if args.delta_u == 0 and not args.measurements else "full")
    cfg = EstimatorConfig(init=args.init, gn_mode=mode, iterations=args.iters, certify=args.certify,
                          u0=u0, truth=truth, seed=args.seed, diagnostics=args.diagnostics)
    rep = estimate(net, mset, cfg)
    if args.dump_h:
        write_matrix_market(args.dump_h, assemble(net, rep.final.u, mset).H)
    _dump(rep.to_dict(), args.out)
    return 0


def cmd_benchmark(args):
    net = load_case(args.case)
    cfg = TrialConfig(case=args.case, sigma_noise=args.sigma, delta_u=args.delta_u, trials=args.trials,
                      seed=args.seed, iterations=args.iters, plan=args.plan, workers=args.workers)
    stats = summarize(run_trials(cfg, net), [i for i in REPORT_ITERS if i <= args.iters])
    timing = bench_timing(net, trials=min(args.trials, 5), sigma=args.sigma, plan=args.plan, seed=args.seed)
    _dump({"accuracy": [s.__dict__ for s in stats], "timing": timing.to_dict()}, args.out)
    return 0


def cmd_sweep(args):
    sigmas = parse_grid(args.sigma_grid)
    rows = sweep(args.case, sigmas, args.delta_u, args.trials, seed=args.seed, plan=args.plan)
    write_csv(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_fixture(args):
    net, mset, u = three_bus_fixture()
    out = {}
    for init in ("spectral", "cold"):
        rep = estimate(net, mset, EstimatorConfig(init=init, u0=u, iterations=args.iters, stop_early=False))
        out[init] = {"theta_deg": np.rad2deg(rep.final.theta).tolist(), "cost": rep.final.cost,
                     "cert_ratio": rep.final.cert_ratio, "costs": rep.costs}
    out["Ybus"] = [[str(z) for z in row] for row in net.Ybus.toarray()]
    _dump(out, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phasesync-se", description="Spectral initialization and certified PSSE")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="run the estimator on one measurement set")
    e.add_argument("case")
    src = e.add_mutually_exclusive_group()
    src.add_argument("--measurements", help="measurement JSON file")
    src.add_argument("--simulate", action="store_true", help="simulate measurements (default)")
    e.add_argument("--sigma", type=float, default=0.0)
    e.add_argument("--delta-u", type=float, default=0.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--plan", choices=["bus", "all"], default="bus")
    e.add_argument("--truth", choices=["case", "random"], default="case")
    e.add_argument("--init", choices=["spectral", "cold"], default="spectral")
    e.add_argument("--gn-mode", choices=["angles", "full"])
    e.add_argument("--iters", type=int, default=5)
    e.add_argument("--certify", action="store_true")
    e.add_argument("--diagnostics", action="store_true")
    e.add_argument("--dump-h", help="write H(u) at the final magnitudes as Matrix Market")
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("benchmark", help="accuracy statistics and timing ratios")
    b.add_argument("case")
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--sigma", type=float, default=0.02)
    b.add_argument("--delta-u", type=float, default=0.0)
    b.add_argument("--plan", choices=["bus", "all"], default="bus")
    b.add_argument("--iters", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("sweep", help="angular error and certificate statistics over a noise grid")
    s.add_argument("case")
    s.add_argument("--sigma-grid", required=True, help="a:b:steps (log-spaced when a > 0)")
    s.add_argument("--delta-u", type=float, default=0.0)
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--plan", choices=["bus", "all"], default="bus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fixture", help="three-bus example: cold start vs spectral init")
    f.add_argument("name", choices=["three-bus"])
    f.add_argument("--iters", type=int, default=30)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fixture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
