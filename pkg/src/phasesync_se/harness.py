"""Experiment driver: ground truth, Monte-Carlo trials, power-law envelopes,
timing, the three-bus fixture, and sweep tables."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .estimator import EstimatorConfig, estimate
from .hbuilder import PhaseSyncProblem
from .measurement import Kind, Measurement, MeasurementPlan, MeasurementSet, simulate
from .netmodel import BranchRecord, BusRecord, Network, load_case

log = logging.getLogger(__name__)

REPORT_ITERS = (0, 1, 5, 10)


# --------------------------------------------------------------------------- ground truth

def ground_truth(net: Network, mode: str = "case", seed: int = 0, path: str | Path | None = None,
                 reference: int = 0) -> np.ndarray:
    """Complex bus voltages used as the true state.

    case: stored Vm/Va; random: Vm ~ U[0.95, 1.05], Va ~ U[-30, 30] deg with
    the reference angle at 0; file: JSON with "Vm" and "Va_deg" lists.
    """
    if mode == "case":
        if np.all(net.Vm == 1.0) and np.all(net.Va == 0.0):
            raise ValueError(f"case {net.name!r} has a flat voltage profile; use mode='random' or 'file'")
        return net.Vm * np.exp(1j * net.Va)
    if mode == "random":
        rng = np.random.default_rng(seed)
        vm = rng.uniform(0.95, 1.05, net.n)
        va = np.deg2rad(rng.uniform(-30.0, 30.0, net.n))
        va[reference] = 0.0
        return vm * np.exp(1j * va)
    if mode == "file":
        if path is None:
            raise ValueError("mode='file' needs a path")
        data = json.loads(Path(path).read_text())
        vm, va = np.asarray(data["Vm"], float), np.deg2rad(np.asarray(data["Va_deg"], float))
        if vm.shape != (net.n,) or va.shape != (net.n,):
            raise ValueError(f"profile length does not match the {net.n}-bus network")
        return vm * np.exp(1j * va)
    raise ValueError(f"unknown ground-truth mode {mode!r}")


def random_network(n: int, seed: int = 0, extra: int | None = None, *, taps: bool = True,
                   shunts: bool = True, name: str = "") -> Network:
    """Connected synthetic network: random spanning tree plus ``extra`` chords,
    with line charging, off-nominal taps, phase shifters and bus shunts."""
    if n < 2:
        raise ValueError("need at least 2 buses")
    rng = np.random.default_rng(seed)
    extra = n // 2 if extra is None else extra
    edges = [(int(rng.integers(0, k)), k) for k in range(1, n)]
    for _ in range(extra):
        a, b = rng.choice(n, 2, replace=False)
        edges.append((int(a), int(b)))
    buses = tuple(BusRecord(id=i + 1, type=3 if i == 0 else 1,
                            Gs=float(rng.uniform(0, 5)) if shunts else 0.0,
                            Bs=float(rng.uniform(-10, 10)) if shunts else 0.0,
                            Vm=1.0, Va=0.0, base_kV=100.0) for i in range(n))
    branches = []
    for k, (a, b) in enumerate(edges):
        tap = taps and rng.random() < 0.3
        branches.append(BranchRecord(a + 1, b + 1, r=float(rng.uniform(0.001, 0.05)), x=float(rng.uniform(0.01, 0.3)),
                                     b=float(rng.uniform(0, 0.1)), tau=float(rng.uniform(0.9, 1.1)) if tap else 1.0,
                                     shift=float(rng.uniform(-10, 10)) if tap else 0.0, row=k + 1))
    return Network(buses, tuple(branches), 100.0, name=name or f"random{n}")


def plan_size(net: Network, plan: str | MeasurementPlan) -> tuple[int, int]:
    """(all real scalars, power scalars only) for a measurement plan."""
    pl = MeasurementPlan.named(plan) if isinstance(plan, str) else plan
    idx = pl.indices(net)
    power = 2 * sum(len(idx[k]) for k in (Kind.BUS_PQ, Kind.BRANCH_PQ_FROM, Kind.BRANCH_PQ_TO))
    return power + len(idx[Kind.VM2]) + 2 * len(idx[Kind.PHASOR]), power


# --------------------------------------------------------------------------- trials

@dataclass
class TrialConfig:
    case: str = "case1354pegase"
    sigma_noise: float = 0.04
    delta_u: float = 0.0
    trials: int = 50
    seed: int = 0
    init: str = "spectral"
    iterations: int = 5
    plan: str = "bus"
    gn_mode: str | None = None  # default: angles with exact magnitudes, full otherwise
    certify: bool | Sequence[int] = True
    truth: str = "case"
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.sigma_noise < 0 or self.delta_u < 0:
            raise ValueError("sigma_noise and delta_u must be nonnegative")

    @property
    def mode(self) -> str:
        return self.gn_mode or ("angles" if self.delta_u == 0 else "full")


@dataclass
class TrialResult:
    trial: int
    ang_err: list[float] = field(default_factory=list)  # degrees, per iteration
    costs: list[float] = field(default_factory=list)
    lbs: list[float | None] = field(default_factory=list)
    cert_ratios: list[float | None] = field(default_factory=list)
    timing_ms: dict = field(default_factory=dict, compare=False)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def at(self, seq: list, i: int):
        """Value at iteration i, carrying the last iterate forward after an early stop."""
        return seq[min(i, len(seq) - 1)] if seq else None


def trial_seeds(master: int, trials: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master).spawn(trials)


def run_trial(net: Network, v_gnd: np.ndarray, cfg: TrialConfig, trial: int,
              ss: np.random.SeedSequence) -> TrialResult:
    meas_ss, mag_ss = ss.spawn(2)
    u_gnd = np.abs(v_gnd)
    u0, vm_values = u_gnd, None
    if cfg.delta_u > 0:
        u0 = u_gnd + np.random.default_rng(mag_ss).uniform(-cfg.delta_u, cfg.delta_u, net.n)
        vm_values = u0 ** 2
    try:
        mset = simulate(net, v_gnd, MeasurementPlan.named(cfg.plan), cfg.sigma_noise,
                        np.random.default_rng(meas_ss), vm_values=vm_values)
        ecfg = EstimatorConfig(init=cfg.init, gn_mode=cfg.mode, iterations=cfg.iterations,
                               certify=cfg.certify, u0=u0, truth=v_gnd, seed=trial)
        rep = estimate(net, mset, ecfg)
    except Exception as exc:  # recorded, not fatal
        log.warning("trial %d failed: %s", trial, exc)
        return TrialResult(trial, error=f"{type(exc).__name__}: {exc}")
    its = rep.iterations
    return TrialResult(trial, ang_err=[it.ang_err_deg for it in its], costs=[it.cost for it in its],
                       lbs=[it.lb for it in its], cert_ratios=[it.cert_ratio for it in its],
                       timing_ms=dict(rep.timing_ms))


def _run_chunk(args):
    net, v_gnd, cfg, jobs = args
    return [run_trial(net, v_gnd, cfg, t, ss) for t, ss in jobs]


def run_trials(cfg: TrialConfig, net: Network | None = None, v_gnd: np.ndarray | None = None) -> list[TrialResult]:
    """Monte-Carlo trials with per-trial seeds split from the master seed."""
    net = net if net is not None else load_case(cfg.case)
    if v_gnd is None:
        v_gnd = ground_truth(net, cfg.truth, cfg.seed)
    jobs = list(enumerate(trial_seeds(cfg.seed, cfg.trials)))
    if cfg.workers <= 1:
        results = _run_chunk((net, v_gnd, cfg, jobs))
    else:
        chunks = [jobs[i::cfg.workers] for i in range(cfg.workers)]
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = [r for part in pool.map(_run_chunk, [(net, v_gnd, cfg, c) for c in chunks]) for r in part]
    return sorted(results, key=lambda r: r.trial)


@dataclass(frozen=True)
class IterStats:
    iteration: int
    median_ang_err_deg: float
    max_ang_err_deg: float
    median_cert: float
    min_cert: float
    failures: int = 0


def summarize(results: Sequence[TrialResult], iters: Sequence[int] = REPORT_ITERS) -> list[IterStats]:
    good = [r for r in results if r.ok]
    out = []
    for i in iters:
        errs = np.array([r.at(r.ang_err, i) for r in good], dtype=float)
        certs = np.array([np.nan if r.at(r.cert_ratios, i) is None else r.at(r.cert_ratios, i) for r in good])
        has_cert = certs[np.isfinite(certs)]
        out.append(IterStats(
            iteration=i,
            median_ang_err_deg=float(np.median(errs)) if len(errs) else float("nan"),
            max_ang_err_deg=float(np.max(errs)) if len(errs) else float("nan"),
            median_cert=float(np.median(has_cert)) if len(has_cert) else float("nan"),
            min_cert=float(np.min(has_cert)) if len(has_cert) else float("nan"),
            failures=len(results) - len(good)))
    return out


# --------------------------------------------------------------------------- power laws

@dataclass(frozen=True)
class PowerLawFit:
    """y ~ beta x^p, or y ~ beta1 x^p + beta2 z^q for two variables."""
    beta: float
    p: float
    beta2: float | None = None
    q: float | None = None
    envelope_scale: float = 1.0  # leading terms multiplied by this bound every sample

    @property
    def two_var(self) -> bool:
        return self.beta2 is not None

    def predict(self, x, z=None, envelope: bool = False):
        s = self.envelope_scale if envelope else 1.0
        y = self.beta * np.asarray(x, float) ** self.p
        if self.two_var:
            y = y + self.beta2 * np.asarray(z, float) ** self.q
        return s * y

    @property
    def beta_env(self) -> float:
        return self.beta * self.envelope_scale

    @property
    def beta2_env(self) -> float | None:
        return None if self.beta2 is None else self.beta2 * self.envelope_scale


def power_law_fit(x, y, z=None) -> PowerLawFit:
    """Least-squares fit in log space, then the smallest uniform scale-up of the
    leading coefficients that puts every sample on or under the envelope."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) < 10 or len(x) != len(y):
        raise ValueError("need at least 10 (x, y) samples of equal length")
    if np.any(~(x > 0)) or np.any(~(y > 0)):
        raise ValueError("power-law samples must be positive")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([np.ones_like(lx), lx])
    (lb, p), *_ = np.linalg.lstsq(A, ly, rcond=None)
    if z is None:
        fit = PowerLawFit(float(np.exp(lb)), float(p))
    else:
        z = np.asarray(z, float)
        if len(z) != len(x) or np.any(~(z > 0)):
            raise ValueError("z samples must be positive and match x")
        lz = np.log(z)

        def res(t):
            return np.logaddexp(t[0] + t[1] * lx, t[2] + t[3] * lz) - ly

        t0 = np.array([lb - np.log(2), p, lb - np.log(2), 1.0])
        sol = least_squares(res, t0, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=20000)
        t = sol.x
        fit = PowerLawFit(float(np.exp(t[0])), float(t[1]), float(np.exp(t[2])), float(t[3]))
    scale = float(np.max(y / fit.predict(x, z)))
    return PowerLawFit(fit.beta, fit.p, fit.beta2, fit.q, envelope_scale=max(scale, 1.0))


# --------------------------------------------------------------------------- three-bus fixture

THREE_BUS_U = 0.85
THREE_BUS_P_MW = (-46.066, 14.485, 10.686)
THREE_BUS_Q_MVAR = (273.22, 238.86, 153.4)


def three_bus_fixture() -> tuple[Network, MeasurementSet, np.ndarray]:
    """Lossless 3-bus loop with fixed 0.85 pu magnitudes and bus PQ measurements (100 MVA base)."""
    buses = tuple(BusRecord(id=i, type=3 if i == 1 else 1, Gs=0.0, Bs=0.0, Vm=THREE_BUS_U, Va=0.0, base_kV=0.0)
                  for i in (1, 2, 3))
    branches = (BranchRecord(1, 2, 0.0, 0.03, row=1), BranchRecord(2, 3, 0.0, 0.08, row=2),
                BranchRecord(1, 3, 0.0, 0.03, row=3))
    net = Network(buses, branches, 100.0, name="three-bus")
    u = np.full(3, THREE_BUS_U)
    ms = [Measurement(Kind.VM2, i, THREE_BUS_U ** 2) for i in range(3)]
    ms += [Measurement(Kind.BUS_PQ, i, complex(p, q) / net.base_MVA)
           for i, (p, q) in enumerate(zip(THREE_BUS_P_MW, THREE_BUS_Q_MVAR))]
    return net, MeasurementSet(net, tuple(ms)), u


def grid_search_3bus(prob: PhaseSyncProblem, resolution_deg: float = 0.01) -> tuple[float, float, float, float]:
    """Exhaustive minimum of x^H H x over x = (1, e^{j t2}, e^{j t3}) on a uniform angle grid.

    Returns (grid minimum, t2, t3 in degrees, slack) where the true minimum lies
    in [grid minimum - slack, grid minimum].
    """
    H = prob.H.toarray()
    if H.shape != (3, 3) or prob.reference != 0:
        raise ValueError("grid search is for 3-bus problems referenced at bus 0")
    k = int(round(360.0 / resolution_deg))
    t = np.deg2rad(np.arange(k) * resolution_deg)
    e = np.exp(1j * t)
    const = H[0, 0].real + H[1, 1].real + H[2, 2].real
    f2 = 2 * np.real(H[0, 1] * e)   # x1 = 1
    f3 = 2 * np.real(H[0, 2] * e)
    best = (np.inf, 0, 0)
    for i2 in range(k):
        # 2 Re(conj(x2) H23 x3)
        row = const + f2[i2] + f3 + 2 * np.real(np.conj(e[i2]) * H[1, 2] * e)
        j = int(np.argmin(row))
        if row[j] < best[0]:
            best = (float(row[j]), i2, j)
    h = np.deg2rad(resolution_deg)
    # f is smooth with |Hessian| <= 2 sum |H_ij|; optimum within h/2 of a grid point per axis
    slack = 2 * np.abs(H).sum() * (h / 2) ** 2 * 2
    return best[0], best[1] * resolution_deg, best[2] * resolution_deg, float(slack)


# --------------------------------------------------------------------------- timing

@dataclass(frozen=True)
class TimingReport:
    case: str
    n: int
    l: int
    m: int
    m_power: int
    init_ms: float
    cert_ms: float
    per_it_ms: float

    @property
    def init_ratio(self) -> float:
        return self.init_ms / self.per_it_ms

    @property
    def cert_ratio(self) -> float:
        return self.cert_ms / self.per_it_ms

    def to_dict(self):
        return {"case": self.case, "n": self.n, "l": self.l, "m": self.m, "m_power": self.m_power,
                "init_ms": self.init_ms, "cert_ms": self.cert_ms, "per_it_ms": self.per_it_ms,
                "init_ratio": self.init_ratio, "cert_ratio": self.cert_ratio}


def bench_timing(case: str | Network = "case1354pegase", trials: int = 5, sigma: float = 0.02, plan: str = "all",
                 seed: int = 0, iterations: int = 3) -> TimingReport:
    """Mean init, certification and Gauss-Newton iteration times.

    One warm-up run (JIT compilation, symbolic analysis) is excluded.
    ``m`` counts every real scalar (|v|^2 included); ``m_power`` counts the
    power scalars only, 2n + 4l for the full plan.
    """
    net = case if isinstance(case, Network) else load_case(case)
    v_gnd = ground_truth(net, "case", seed)
    pl = MeasurementPlan.named(plan)
    seeds = trial_seeds(seed, trials + 1)
    rows = []
    for t, ss in enumerate(seeds):
        mset = simulate(net, v_gnd, pl, sigma, np.random.default_rng(ss))
        rep = estimate(net, mset, EstimatorConfig(u0=np.abs(v_gnd), iterations=iterations, stop_early=False))
        if t > 0:
            rows.append((rep.timing_ms["init"], rep.timing_ms["cert"], rep.timing_ms["per_it"]))
    init, cert, per_it = np.mean(rows, axis=0)
    m, m_power = plan_size(net, pl)
    return TimingReport(net.name, net.n, net.l, m, m_power, float(init), float(cert), float(per_it))


# --------------------------------------------------------------------------- sweeps

SWEEP_COLUMNS = ("sigma", "delta_u", "iter", "median_ang_err_deg", "max_ang_err_deg", "median_cert", "min_cert")


def parse_grid(spec: str) -> np.ndarray:
    """'a:b:steps' -> log-spaced grid when a > 0, linear grid from a = 0."""
    try:
        a, b, k = spec.split(":")
        a, b, k = float(a), float(b), int(k)
    except ValueError:
        raise ValueError(f"grid must look like a:b:steps, got {spec!r}") from None
    if k < 1 or a < 0 or b < a:
        raise ValueError(f"bad grid {spec!r}")
    if k == 1:
        return np.array([a])
    return np.geomspace(a, b, k) if a > 0 else np.linspace(a, b, k)


def sweep(case: str, sigmas: Sequence[float], delta_u: float, trials: int, seed: int = 0,
          iters: Sequence[int] = REPORT_ITERS, plan: str = "bus", certify=True,
          net: Network | None = None) -> list[dict]:
    net = net if net is not None else load_case(case)
    v_gnd = ground_truth(net, "case", seed)
    rows = []
    for k, s in enumerate(sigmas):
        cfg = TrialConfig(case=case, sigma_noise=float(s), delta_u=delta_u, trials=trials, seed=seed + k,
                          iterations=max(iters), plan=plan, certify=certify)
        for st in summarize(run_trials(cfg, net, v_gnd), iters):
            rows.append({"sigma": float(s), "delta_u": delta_u, "iter": st.iteration,
                         "median_ang_err_deg": st.median_ang_err_deg, "max_ang_err_deg": st.max_ang_err_deg,
                         "median_cert": st.median_cert, "min_cert": st.min_cert})
    return rows


def write_csv(path, rows: Sequence[dict], columns: Sequence[str] = SWEEP_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in columns})


def timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, 1e3 * (time.perf_counter() - t)
