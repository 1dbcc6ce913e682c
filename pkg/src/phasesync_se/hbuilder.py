"""Phase-synchronization matrix H(u) for the fixed-magnitude angle subproblem.

For unit-modulus x and v = u * x the weighted least-squares cost splits as

    cost(u * x) = c(u) + x^H H(u) x,

where c(u) collects the squared-magnitude terms and H(u) = sum C^H W C over
bus injections, branch flows (both ends) and voltage phasors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .measurement import Kind, MeasurementSet
from .netmodel import Network

PRUNE_REL = 1e-14


@dataclass(frozen=True, eq=False)
class PhaseSyncProblem:
    H: sp.csc_matrix
    c: float
    u: np.ndarray
    reference: int = 0

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def value(self, x: np.ndarray) -> float:
        """x^H H x (without the constant offset)."""
        return float(np.real(np.vdot(x, self.H @ x)))


def _check_u(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0)):
        raise ValueError("voltage magnitudes must be strictly positive")
    return u


def hermitian_part(A: sp.spmatrix) -> sp.csc_matrix:
    """(A + A^H)/2 with near-cancellations pruned; pattern stays symmetric."""
    H = ((A + A.conj().T) * 0.5).tocsc()
    H.sum_duplicates()
    if H.nnz:
        thresh = PRUNE_REL * np.abs(H.data).max()
        H.data[np.abs(H.data) < thresh] = 0
    H.eliminate_zeros()
    H.sort_indices()
    return H


def _gram(C: sp.spmatrix, w: np.ndarray) -> sp.csc_matrix:
    keep = np.flatnonzero(w > 0)
    if len(keep) == 0:
        n = C.shape[1]
        return sp.csc_matrix((n, n), dtype=complex)
    Ck = C.tocsr()[keep]
    return hermitian_part(Ck.conj().T @ sp.diags(w[keep]) @ Ck)


def h_bus(net: Network, u, b, w) -> sp.csc_matrix:
    """H_bus = C^H diag(w) C with C = diag(u) Ybus diag(u) - diag(conj(b))."""
    u = _check_u(u)
    b = np.asarray(b, dtype=complex)
    w = np.asarray(w, dtype=float)
    U = sp.diags(u)
    C = U @ net.Ybus @ U - sp.diags(np.conj(b))
    return _gram(C, w)


def _h_end(Y: sp.spmatrix, ends: np.ndarray, n: int, u: np.ndarray, b: np.ndarray, w: np.ndarray):
    l = len(ends)
    D = sp.csr_matrix((np.ones(l), (np.arange(l), ends)), shape=(l, n))
    C = sp.diags(u[ends]) @ Y @ sp.diags(u) - sp.diags(np.conj(b)) @ D
    return _gram(C, w)


def h_branch(net: Network, u, b_from, w_from, b_to, w_to) -> sp.csc_matrix:
    """Sum of the from-end and to-end branch-flow matrices."""
    u = _check_u(u)
    Hf = _h_end(net.Yf, net.from_idx, net.n, u, np.asarray(b_from, complex), np.asarray(w_from, float))
    Ht = _h_end(net.Yt, net.to_idx, net.n, u, np.asarray(b_to, complex), np.asarray(w_to, float))
    return hermitian_part(Hf + Ht)


def h_pmu(u, b, w, reference: int = 0) -> sp.csc_matrix:
    """(diag(u) - e_ref b^H) diag(w) (diag(u) - b e_ref^T), with x[reference] = 1."""
    u = _check_u(u)
    b = np.asarray(b, dtype=complex)
    w = np.asarray(w, dtype=float)
    n = len(u)
    C = sp.diags(u).tocsr() - sp.csr_matrix((b, (np.arange(n), np.full(n, reference))), shape=(n, n))
    return _gram(C, w)


def _scatter(n: int, group, dtype) -> tuple[np.ndarray, np.ndarray]:
    b = np.zeros(n, dtype=dtype)
    w = np.zeros(n)
    b[group.index] = group.value
    w[group.index] = group.weight
    return b, w


def assemble(net: Network, u, mset: MeasurementSet) -> PhaseSyncProblem:
    """Build H(u) and c(u) for a measurement set."""
    u = _check_u(u)
    g = mset.groups
    n, l = net.n, net.l
    parts = []
    if len(g[Kind.BUS_PQ]):
        parts.append(h_bus(net, u, *_scatter(n, g[Kind.BUS_PQ], complex)))
    if len(g[Kind.BRANCH_PQ_FROM]) or len(g[Kind.BRANCH_PQ_TO]):
        bf, wf = _scatter(l, g[Kind.BRANCH_PQ_FROM], complex)
        bt, wt = _scatter(l, g[Kind.BRANCH_PQ_TO], complex)
        parts.append(h_branch(net, u, bf, wf, bt, wt))
    if len(g[Kind.PHASOR]):
        parts.append(h_pmu(u, *_scatter(n, g[Kind.PHASOR], complex), reference=mset.reference))
    if parts:
        H = parts[0] if len(parts) == 1 else hermitian_part(sum(parts[1:], parts[0]))
    else:
        H = sp.csc_matrix((n, n), dtype=complex)
    vm = g[Kind.VM2]
    c = float(np.sum(vm.weight * (u[vm.index] ** 2 - vm.value) ** 2)) if len(vm) else 0.0
    return PhaseSyncProblem(H=H.astype(complex), c=c, u=u, reference=mset.reference)


def write_matrix_market(path, H: sp.spmatrix) -> None:
    """Dump H in Matrix Market complex Hermitian coordinate format."""
    from scipy.io import mmwrite
    mmwrite(str(path), sp.coo_matrix(H), field="complex", symmetry="hermitian")
