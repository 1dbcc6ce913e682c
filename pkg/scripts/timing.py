"""Init, certificate and per-iteration wall times with the full bus+branch plan.

Absolute numbers depend on the machine; the ratios are what carry over.

    python scripts/timing.py case1354pegase case13659pegase
"""
import argparse

from phasesync_se.harness import bench_timing


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("cases", nargs="*", default=["case1354pegase"])
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--sigma", type=float, default=0.02)
    args = ap.parse_args()
    print(f"{'case':<18} {'n':>6} {'l':>6} {'m_power':>8} {'init ms':>9} {'cert ms':>9} {'it ms':>9} "
          f"{'init/it':>8} {'cert/it':>8}")
    for case in args.cases:
        r = bench_timing(case, trials=args.trials, sigma=args.sigma, plan="all")
        print(f"{r.case:<18} {r.n:>6} {r.l:>6} {r.m_power:>8} {r.init_ms:>9.1f} {r.cert_ms:>9.1f} "
              f"{r.per_it_ms:>9.1f} {r.init_ratio:>8.2f} {r.cert_ratio:>8.2f}")


if __name__ == "__main__":
    main()
