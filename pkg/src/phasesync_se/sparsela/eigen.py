"""Minimum eigenpairs by shifted inverse iteration, and certified lower bounds
on the minimum eigenvalue by Cholesky-tested bisection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cholesky import CholFactor, analyze, cholesky, solve, _as_csc


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class EigResult:
    vector: np.ndarray
    rayleigh: float
    residual_norm: float
    iterations: int
    converged: bool = True
    alpha: float = 0.0


def _rayleigh(H, z):
    Hz = H @ z
    rho = float(np.real(np.vdot(z, Hz)) / np.real(np.vdot(z, z)))
    return rho, float(np.linalg.norm(Hz - rho * z))


def shifted_factor(H: sp.spmatrix, alpha: float = 0.0) -> tuple[CholFactor, float]:
    """Factor H - alpha I; on failure at alpha = 0 retry once with a tiny negative shift."""
    H = _as_csc(H)
    F = cholesky(H, alpha)
    if not F and alpha == 0.0:
        n = H.shape[0]
        alpha = -1e-10 * float(np.real(H.diagonal().sum())) / n
        F = cholesky(H, alpha)
    if not F:
        raise FactorizationError(f"H - ({alpha:g}) I is not positive definite (pivot {F.index}: {F.pivot:g})")
    return F, alpha


def min_eigvec(H: sp.spmatrix, alpha: float | str = 0.0, tol: float = 1e-8, maxit: int = 500,
               seed: int | np.random.Generator | None = 0, z0: np.ndarray | None = None) -> EigResult:
    """Eigenvector of the smallest eigenvalue of Hermitian ``H`` by inverse iteration.

    Iterates z <- (H - alpha I)^{-1} z / ||.|| from a complex Gaussian start.
    ``alpha='bisect'`` shifts to a Cholesky-certified lower bound just under
    lambda_min, which helps when lambda_1 / lambda_2 is close to 1.
    Stops when the residual ||Hz - rho z|| <= tol * max(1, |rho|), or when
    successive iterates agree to ``tol`` up to a global phase (the residual of
    badly scaled H bottoms out near eps_mach * ||H|| and cannot go lower).
    """
    H = _as_csc(H)
    n = H.shape[0]
    if alpha == "bisect":
        alpha = min_eig_lower_bound(H, eps=1e-6 * max(_norm_inf(H), 1e-300), gallop=True)
    F, alpha = shifted_factor(H, float(alpha))
    if z0 is None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    else:
        z = np.asarray(z0, dtype=complex).copy()
    z /= np.linalg.norm(z)
    best = None
    for it in range(1, maxit + 1):
        znew = solve(F, z)
        znew /= np.linalg.norm(znew)
        # align the global phase before measuring the step
        ip = np.vdot(znew, z)
        phase = ip / abs(ip) if ip != 0 else 1.0
        step = float(np.linalg.norm(znew * phase - z))
        z = znew
        rho, res = _rayleigh(H, z)
        if best is None or res < best[2]:
            best = (z, rho, res)
        if res <= tol * max(1.0, abs(rho)) or step <= tol:
            return EigResult(z, rho, res, it, True, alpha)
    z, rho, res = best
    return EigResult(z, rho, res, maxit, False, alpha)


def spectral_gap(H: sp.spmatrix, first: EigResult, tol: float = 1e-8, maxit: int = 500,
                 seed: int | np.random.Generator | None = 1) -> tuple[float, bool]:
    """lambda_2 - lambda_1 by inverse iteration deflated against ``first.vector``.

    Reuses the shift of ``first``. Returns (gap, converged); reported only as a diagnostic.
    """
    H = _as_csc(H)
    n = H.shape[0]
    if n < 2:
        return float("inf"), True
    F, _ = shifted_factor(H, first.alpha)
    q = first.vector / np.linalg.norm(first.vector)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    rho_old = np.inf
    for _ in range(maxit):
        z = z - q * np.vdot(q, z)
        z = solve(F, z)
        z = z - q * np.vdot(q, z)
        z /= np.linalg.norm(z)
        rho, res = _rayleigh(H, z)
        # the Rayleigh quotient converges at the square of the vector rate
        if res <= tol * max(1.0, abs(rho)) or abs(rho - rho_old) <= tol ** 2 * max(1.0, abs(rho)):
            return rho - first.rayleigh, True
        rho_old = rho
    return rho - first.rayleigh, False


def min_eig_lower_bound(H: sp.spmatrix, y=None, eps: float | None = None, v: np.ndarray | None = None,
                        *, gallop: bool = False, return_info: bool = False):
    """Lower bound mu with mu <= lambda_min(H - diag(y)) <= mu + eps, assuming H is PSD.

    Plain bisection between mu = -max(0, max y) and the Rayleigh quotient of
    ``v`` (all-ones by default), with Cholesky success as the test. With
    ``gallop`` the lower end is first found by stepping down from the upper
    end in doubling steps, which costs one factorization when the bound is tight.
    """
    H = _as_csc(H)
    n = H.shape[0]
    y = np.zeros(n) if y is None else np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(H.data)):
        raise ValueError("nonfinite input")
    if eps is None:
        eps = max(1e-9 * max(1.0, _norm_inf(H)), 1e-12)
    if not eps > 0:
        raise ValueError("eps must be positive")
    sym = analyze(H)
    values = sym.values(H)

    def ok(alpha):
        return bool(sym.factor(values, y + alpha))

    v = np.ones(n, dtype=complex) if v is None else np.asarray(v, dtype=complex)
    mu = -max(0.0, float(y.max(initial=0.0)))
    gamma = float(np.real(np.vdot(v, H @ v) - np.vdot(v, y * v)) / np.real(np.vdot(v, v)))
    factorizations = 0
    if gallop:
        step = eps
        while gamma - step > mu:
            factorizations += 1
            if ok(gamma - step):
                mu = gamma - step
                break
            gamma, step = gamma - step, 2 * step
    while gamma - mu > eps:
        alpha = 0.5 * (mu + gamma)
        factorizations += 1
        if ok(alpha):
            mu = alpha
        else:
            gamma = alpha
    if return_info:
        return mu, {"gamma": gamma, "factorizations": factorizations, "eps": eps}
    return mu


def bisection_steps(mu: float, gamma: float, eps: float) -> int:
    """Number of plain bisection steps from [mu, gamma] to width eps."""
    return max(0, math.ceil(math.log2((gamma - mu) / eps))) if gamma > mu else 0


def _norm_inf(H) -> float:
    return float(np.abs(H).sum(axis=1).max()) if H.nnz else 0.0
