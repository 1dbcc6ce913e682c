"""Spectral initialization, Gauss-Newton refinement and global optimality certificates."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hbuilder import PhaseSyncProblem, assemble
from .measurement import KIND_ORDER, Kind, MeasurementSet, cost, residuals
from .netmodel import Network, incidence
from .sparsela.eigen import EigResult, min_eig_lower_bound, min_eigvec, spectral_gap


class EstimationError(RuntimeError):
    pass


class RankDeficientError(EstimationError):
    def __init__(self, smin: float, msg: str = ""):
        self.smallest_singular_value = smin
        super().__init__(f"Gauss-Newton system is rank deficient or ill-conditioned "
                         f"(smallest singular value {smin:.3e}){': ' + msg if msg else ''}")


@dataclass(frozen=True)
class VoltageState:
    u: np.ndarray
    theta: np.ndarray
    reference: int = 0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if np.any(~(u > 0)):
            raise ValueError("voltage magnitudes must be strictly positive")
        theta = theta - theta[self.reference]
        theta[self.reference] = 0.0
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "theta", theta)

    @property
    def v(self) -> np.ndarray:
        return self.u * np.exp(1j * self.theta)

    @property
    def x(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    @classmethod
    def from_voltage(cls, v: np.ndarray, reference: int = 0) -> "VoltageState":
        return cls(np.abs(v), np.angle(v), reference)


@dataclass(frozen=True)
class Certificate:
    y: np.ndarray
    mu: float
    lb: float
    delta: float
    cost_at_x: float
    eps: float = 0.0
    factorizations: int = 0

    @property
    def ratio(self) -> float:
        """Certified fraction lb / cost (at most 1)."""
        if self.cost_at_x <= 0:
            return 1.0 if self.delta == 0 else float("-inf")
        return self.lb / self.cost_at_x


# --------------------------------------------------------------------------- spectral init

def proj(v: np.ndarray) -> np.ndarray:
    """Entrywise projection onto the unit circle; (near-)zero entries map to 1."""
    v = np.asarray(v, dtype=complex)
    mag = np.abs(v)
    out = np.ones_like(v)
    nz = mag >= 1e-14
    out[nz] = v[nz] / mag[nz]
    return out


def rotate_to_reference(x: np.ndarray, reference: int) -> np.ndarray:
    return x * np.conj(x[reference])


def spectral_init(prob: PhaseSyncProblem, seed=0, *, tol: float = 1e-8, maxit: int = 500,
                  return_eig: bool = False):
    """Unit-modulus angle estimate from the minimum eigenvector of H."""
    eig = min_eigvec(prob.H, 0.0, tol, maxit, seed)
    x0 = rotate_to_reference(proj(eig.vector), prob.reference)
    if return_eig:
        return x0, eig
    return x0


# --------------------------------------------------------------------------- residual model

@dataclass(frozen=True)
class Linearization:
    r: np.ndarray        # weighted residual vector
    J: sp.csr_matrix     # weighted Jacobian w.r.t. the free variables
    columns: np.ndarray  # free angle columns (reference removed), then magnitudes if full


def _partials(net: Network, v: np.ndarray):
    """Complex derivatives of bus injections and branch flows w.r.t. angle and magnitude."""
    Ybus, Yf, Yt = net.admittances
    vn = v / np.abs(v)
    dV, dVn = sp.diags(v), sp.diags(vn)
    ibus = Ybus @ v
    dS_dth = 1j * dV @ np.conj(sp.diags(ibus) - Ybus @ dV)
    dS_du = dV @ np.conj(Ybus @ dVn) + sp.diags(np.conj(ibus)) @ dVn
    Df, Dt = incidence(net)
    out = {Kind.BUS_PQ: (dS_dth, dS_du)}
    for kind, Y, D, ends in ((Kind.BRANCH_PQ_FROM, Yf, Df, net.from_idx), (Kind.BRANCH_PQ_TO, Yt, Dt, net.to_idx)):
        i = Y @ v
        dth = 1j * (sp.diags(np.conj(i)) @ D @ dV - sp.diags(v[ends]) @ np.conj(Y @ dV))
        du = sp.diags(v[ends]) @ np.conj(Y @ dVn) + sp.diags(np.conj(i)) @ D @ dVn
        out[kind] = (dth, du)
    return out


def linearize(net: Network, mset: MeasurementSet, state: VoltageState, mode: str = "full") -> Linearization:
    """Weighted residual r_i = sqrt(w_i) (h_i - b_i) and its Jacobian in polar coordinates.

    Complex kinds contribute their real parts then their imaginary parts.
    """
    if mode not in ("angles", "full"):
        raise ValueError(f"mode must be 'angles' or 'full', got {mode!r}")
    n = net.n
    v = state.v
    res = residuals(net, v, mset)
    groups = mset.groups
    needs_flows = len(groups[Kind.BUS_PQ]) + len(groups[Kind.BRANCH_PQ_FROM]) + len(groups[Kind.BRANCH_PQ_TO])
    partials = _partials(net, v) if needs_flows else {}
    rows_r, blocks = [], []
    for kind in KIND_ORDER:
        g = groups[kind]
        if not len(g):
            continue
        sw = np.sqrt(g.weight)
        W = sp.diags(sw)
        idx = g.index
        if kind is Kind.VM2:
            rows_r.append(sw * res[kind].real)
            dth = sp.csr_matrix((len(idx), n))
            du = sp.csr_matrix((2 * state.u[idx], (np.arange(len(idx)), idx)), shape=(len(idx), n))
            blocks.append((W @ dth, W @ du))
            continue
        if kind is Kind.PHASOR:
            sel = sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), n))
            dth = sel @ sp.diags(1j * v)
            du = sel @ sp.diags(v / np.abs(v))
        else:
            dth_all, du_all = partials[kind]
            dth, du = dth_all.tocsr()[idx], du_all.tocsr()[idx]
        r = res[kind]
        rows_r += [sw * r.real, sw * r.imag]
        blocks.append((W @ dth.real, W @ du.real))
        blocks.append((W @ dth.imag, W @ du.imag))
    r = np.concatenate(rows_r) if rows_r else np.zeros(0)
    Jth = sp.vstack([b[0] for b in blocks]).tocsc() if blocks else sp.csc_matrix((0, n))
    Ju = sp.vstack([b[1] for b in blocks]).tocsc() if blocks else sp.csc_matrix((0, n))
    free = np.delete(np.arange(n), state.reference)
    if mode == "angles":
        J = Jth[:, free]
    else:
        J = sp.hstack([Jth[:, free], Ju]).tocsc()
    return Linearization(r=r, J=sp.csr_matrix(J), columns=free)


def _smallest_singular_value(J: sp.spmatrix) -> float:
    if min(J.shape) == 0:
        return 0.0
    if J.shape[1] <= 3000:
        s = np.linalg.svd(J.toarray(), compute_uv=False)
        return float(s[-1]) if J.shape[0] >= J.shape[1] else 0.0
    try:
        lam = spla.eigsh((J.T @ J).tocsc(), k=1, sigma=0, which="LM", return_eigenvectors=False)
        return float(np.sqrt(max(lam[0], 0.0)))
    except Exception:  # singular shift-invert
        return 0.0


def lstsq_step(J: sp.spmatrix, r: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """Minimise ||r + J d||^2 (+ damping ||d||^2) via the sparse augmented system.

    [[I, J], [J^T, -damping I]] [s; d] = [-r; 0] is solved by sparse LU, which
    avoids forming J^T J and squaring the condition number.
    """
    m, k = J.shape
    if m < k and damping == 0:
        raise RankDeficientError(0.0, f"{m} residuals for {k} unknowns")
    K = sp.bmat([[sp.identity(m), J], [J.T, -damping * sp.identity(k) if damping else None]], format="csc")
    rhs = np.concatenate([-r, np.zeros(k)])
    try:
        lu = spla.splu(K, permc_spec="COLAMD")
        sol = lu.solve(rhs)
    except RuntimeError as exc:  # exactly singular
        raise RankDeficientError(_smallest_singular_value(J), str(exc)) from None
    d = sol[m:]
    if not np.all(np.isfinite(d)):
        raise RankDeficientError(_smallest_singular_value(J), "nonfinite step")
    # one step of iterative refinement on the augmented system
    resid = rhs - K @ sol
    if np.linalg.norm(resid) > 1e-12 * (np.linalg.norm(rhs) + 1e-300):
        sol = sol + lu.solve(resid)
        d = sol[m:]
    # a nearly singular J shows up as a huge, non-descent step
    growth = np.linalg.norm(J @ d) / (np.linalg.norm(r) + 1e-300)
    if damping == 0 and growth > 1e8:
        raise RankDeficientError(_smallest_singular_value(J), "step blew up")
    return d


def gn_step(net: Network, mset: MeasurementSet, state: VoltageState, mode: str = "angles",
            damping: float = 0.0) -> VoltageState:
    """One Gauss-Newton update of the angles (and magnitudes when ``mode='full'``)."""
    lin = linearize(net, mset, state, mode)
    if not np.all(np.isfinite(lin.r)):
        raise EstimationError("nonfinite residual")
    if not np.any(lin.r):
        return state
    d = lstsq_step(lin.J, lin.r, damping)
    theta = state.theta.copy()
    k = len(lin.columns)
    theta[lin.columns] += d[:k]
    u = state.u
    if mode == "full":
        u = state.u + d[k:]
        if np.any(u <= 0):
            raise EstimationError("Gauss-Newton step produced a nonpositive voltage magnitude")
    return VoltageState(u, theta, state.reference)


# --------------------------------------------------------------------------- certification

def certificate_eps(prob: PhaseSyncProblem, value: float) -> float:
    """Bisection tolerance on mu: resolves the gap to 1e-10 of the cost."""
    n = prob.n
    scale = max(abs(value), 1e-300)
    return max(1e-10 * scale / n, 1e-300, 4 * np.finfo(float).eps * abs(value) / n)


def certify(prob: PhaseSyncProblem, x: np.ndarray, eps: float | None = None, *, gallop: bool = True) -> Certificate:
    """Dual certificate y = Re(conj(x) * Hx) and the lower bound it proves."""
    x = np.asarray(x, dtype=complex)
    if np.max(np.abs(np.abs(x) - 1.0)) > 1e-9:
        raise ValueError("x must have unit-modulus entries")
    H = prob.H
    Hx = H @ x
    y = np.real(np.conj(x) * Hx)
    value = float(np.real(np.vdot(x, Hx)))
    if abs(y.sum() - value) > 1e-9 * max(1.0, abs(value)):
        raise EstimationError("dual identity 1^T y = x^H H x violated")
    if eps is None:
        eps = certificate_eps(prob, value)
    mu, info = min_eig_lower_bound(H, y, eps, v=x, gallop=gallop, return_info=True)
    n = prob.n
    lb = float(y.sum() + n * min(0.0, mu))
    delta = n * max(0.0, -mu)
    return Certificate(y=y, mu=float(mu), lb=lb, delta=delta, cost_at_x=value, eps=eps,
                       factorizations=info["factorizations"])


# --------------------------------------------------------------------------- diagnostics

@dataclass(frozen=True)
class Diagnostics:
    lam: float
    sigma: float
    guaranteed: bool
    converged: bool = True
    spectral_gap: float | None = None  # lambda_2(H) - lambda_1(H) at the initial magnitudes

    def to_dict(self):
        d = {"lambda": self.lam, "sigma": self.sigma, "guaranteed": self.guaranteed, "converged": self.converged}
        if self.spectral_gap is not None:
            d["spectral_gap"] = self.spectral_gap
        return d


def weighted_residual_matrix(net: Network, mset: MeasurementSet, v: np.ndarray) -> sp.csc_matrix:
    """sum_i w_i (v^H A_i v - b_i) A_i over all quadratic measurements."""
    n = net.n
    res = residuals(net, v, mset)
    g = mset.groups
    M = sp.csc_matrix((n, n), dtype=complex)
    if Kind.VM2 in res:
        M = M + sp.csc_matrix((g[Kind.VM2].weight * res[Kind.VM2], (g[Kind.VM2].index, g[Kind.VM2].index)),
                              shape=(n, n))
    ends = {Kind.BUS_PQ: (net.Ybus, np.arange(n), n), Kind.BRANCH_PQ_FROM: (net.Yf, net.from_idx, net.l),
            Kind.BRANCH_PQ_TO: (net.Yt, net.to_idx, net.l)}
    for kind, (Y, cols, rows) in ends.items():
        if kind not in res:
            continue
        # P-part (M+M^H)/2 and Q-part (M-M^H)/2j combine to conj(rho)/2 M + rho/2 M^H
        coef = np.zeros(rows, dtype=complex)
        coef[g[kind].index] = g[kind].weight * np.conj(res[kind]) / 2
        D = sp.csr_matrix((coef, (np.arange(rows), cols)), shape=(rows, n))
        B = Y.conj().T @ D
        M = M + B + B.conj().T
    return M.tocsc()


def _power_sigma_max(M: sp.spmatrix, tol=1e-10, maxit=1000, seed=0) -> tuple[float, bool]:
    n = M.shape[0]
    if M.nnz == 0:
        return 0.0, True
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    z /= np.linalg.norm(z)
    est = 0.0
    for _ in range(maxit):
        w = M.conj().T @ (M @ z)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0, True
        z = w / nrm
        new = np.sqrt(nrm)
        if abs(new - est) <= tol * new:
            return float(new), True
        est = new
    return float(est), False


def diagnostics(net: Network, mset: MeasurementSet, state: VoltageState, mode: str = "full") -> Diagnostics:
    """Local-convergence quantities: lambda = lambda_min(J^T J), sigma = 2 sigma_max(sum w r A)."""
    lin = linearize(net, mset, state, mode)
    J = lin.J
    converged = True
    if net.n <= 2000:
        JtJ = (J.T @ J).toarray()
        lam = float(sla.eigvalsh(JtJ, subset_by_index=[0, 0])[0]) if JtJ.size else 0.0
    else:
        lam = _smallest_singular_value(J) ** 2
    sig, ok = _power_sigma_max(weighted_residual_matrix(net, mset, state.v))
    converged &= ok
    sigma = 2.0 * sig
    return Diagnostics(lam=max(lam, 0.0) if lam > -1e-12 else lam, sigma=sigma,
                       guaranteed=bool(lam > 0 and sigma < lam / 2), converged=converged)


# --------------------------------------------------------------------------- pipeline

@dataclass
class EstimatorConfig:
    init: str = "spectral"            # spectral | cold | file
    gn_mode: str = "angles"           # angles | full
    iterations: int = 5
    certify: bool | Iterable[int] = True
    u0: np.ndarray | None = None      # magnitudes; default from |v|^2 measurements, else 1
    theta0: np.ndarray | None = None  # angles for init="file" (radians)
    seed: int = 0
    damping: float = 0.0
    eig_tol: float = 1e-8
    eig_maxit: int = 500
    stop_early: bool = True
    truth: np.ndarray | None = None   # ground-truth voltages for angular errors
    diagnostics: bool = False


@dataclass
class IterationRecord:
    theta: np.ndarray
    u: np.ndarray
    cost: float
    ps_cost: float
    lb: float | None = None
    cert_ratio: float | None = None
    delta: float | None = None
    mu: float | None = None
    ang_err_deg: float | None = None

    def to_dict(self):
        d = {"theta_deg": np.rad2deg(self.theta).tolist(), "u": self.u.tolist(), "cost": self.cost,
             "ps_cost": self.ps_cost, "lb": self.lb, "cert_ratio": self.cert_ratio, "delta": self.delta}
        if self.ang_err_deg is not None:
            d["ang_err_deg"] = self.ang_err_deg
        return d


@dataclass
class EstimateReport:
    iterations: list[IterationRecord] = field(default_factory=list)
    timing_ms: dict = field(default_factory=dict)
    converged: bool = False
    diagnostics: Diagnostics | None = None
    eig: EigResult | None = None

    @property
    def costs(self) -> list[float]:
        return [it.cost for it in self.iterations]

    @property
    def final(self) -> IterationRecord:
        return self.iterations[-1]

    def at(self, i: int) -> IterationRecord:
        """Iterate i, carrying the last one forward after an early stop."""
        return self.iterations[min(i, len(self.iterations) - 1)]

    def to_dict(self) -> dict:
        return {"iterations": [it.to_dict() for it in self.iterations],
                "diagnostics": self.diagnostics.to_dict() if self.diagnostics else {},
                "timing_ms": dict(self.timing_ms), "converged": self.converged}


def angular_error_deg(theta: np.ndarray, truth: np.ndarray, reference: int = 0) -> float:
    """max_k |(theta_k - theta_ref) - (truth_k - truth_ref)| in degrees, wrapped to [-180, 180)."""
    d = (theta - theta[reference]) - (truth - truth[reference])
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return float(np.rad2deg(np.max(np.abs(d))))


def initial_magnitudes(net: Network, mset: MeasurementSet) -> np.ndarray:
    u = np.ones(net.n)
    g = mset.groups[Kind.VM2]
    ok = g.weight > 0
    u[g.index[ok]] = np.sqrt(np.clip(g.value[ok], 1e-6, None))
    return u


def estimate(net: Network, mset: MeasurementSet, config: EstimatorConfig | None = None) -> EstimateReport:
    """Run init -> Gauss-Newton iterations, certifying the angles along the way."""
    cfg = config or EstimatorConfig()
    ref = mset.reference
    report = EstimateReport()
    schedule = None if isinstance(cfg.certify, bool) else set(cfg.certify)
    truth_theta = None if cfg.truth is None else np.angle(cfg.truth)

    def wants_cert(i):
        return cfg.certify if schedule is None else i in schedule

    u0 = initial_magnitudes(net, mset) if cfg.u0 is None else np.asarray(cfg.u0, dtype=float)
    t0 = time.perf_counter()
    prob = assemble(net, u0, mset)
    prob0 = prob
    if cfg.init == "spectral":
        x0, eig = spectral_init(prob, cfg.seed, tol=cfg.eig_tol, maxit=cfg.eig_maxit, return_eig=True)
        report.eig = eig
        state = VoltageState(u0, np.angle(x0), ref)
    elif cfg.init == "cold":
        state = VoltageState(u0, np.zeros(net.n), ref)
    elif cfg.init == "file":
        if cfg.theta0 is None:
            raise ValueError("init='file' needs theta0")
        state = VoltageState(u0, np.asarray(cfg.theta0, dtype=float), ref)
    else:
        raise ValueError(f"unknown init mode {cfg.init!r}")
    report.timing_ms["init"] = 1e3 * (time.perf_counter() - t0)

    cert_times, gn_times = [], []

    def record(state: VoltageState, prob: PhaseSyncProblem, i: int):
        x = state.x
        rec = IterationRecord(theta=state.theta.copy(), u=state.u.copy(), cost=cost(net, state.v, mset),
                              ps_cost=prob.value(x))
        if wants_cert(i):
            tc = time.perf_counter()
            cert = certify(prob, x)
            cert_times.append(time.perf_counter() - tc)
            rec.lb, rec.cert_ratio, rec.delta, rec.mu = cert.lb, cert.ratio, cert.delta, cert.mu
        if truth_theta is not None:
            rec.ang_err_deg = angular_error_deg(state.theta, truth_theta, ref)
        report.iterations.append(rec)

    record(state, prob, 0)
    converged = False
    for i in range(1, cfg.iterations + 1):
        tg = time.perf_counter()
        new = gn_step(net, mset, state, cfg.gn_mode, cfg.damping)
        gn_times.append(time.perf_counter() - tg)
        if cfg.gn_mode == "full":
            prob = assemble(net, new.u, mset)
        prev_cost = report.iterations[-1].cost
        dtheta = np.max(np.abs(new.theta - state.theta))
        state = new
        record(state, prob, i)
        rel_drop = (prev_cost - report.iterations[-1].cost) / max(prev_cost, 1e-300)
        if abs(rel_drop) < 1e-12 or dtheta < 1e-10:
            converged = True
            if cfg.stop_early:
                break
    report.converged = converged
    if cert_times:
        report.timing_ms["cert"] = 1e3 * float(np.mean(cert_times))
    if gn_times:
        report.timing_ms["per_it"] = 1e3 * float(np.mean(gn_times))
    if cfg.diagnostics:
        diag = diagnostics(net, mset, state)
        if report.eig is not None:
            gap, ok = spectral_gap(prob0.H, report.eig, cfg.eig_tol, cfg.eig_maxit)
            diag = replace(diag, spectral_gap=gap, converged=diag.converged and ok)
        report.diagnostics = diag
    return report
