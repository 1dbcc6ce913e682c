"""Sparse Hermitian Cholesky factorization  P (H - diag(shift)) P^T = L L^H.

Symbolic analysis (ordering, elimination tree, column counts) is done once per
sparsity pattern and cached; the numeric phase is an up-looking row-by-row
factorization compiled with numba.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .ordering import Ordering, fill_order

# A pivot d_k fails when d_k <= PIVOT_REL * max(previous pivots) or is nonfinite.
PIVOT_REL = 0.0


@numba.njit(cache=True)
def _etree(n, Cp, Ci):
    parent = np.full(n, -1, np.int64)
    ancestor = np.full(n, -1, np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@numba.njit(cache=True)
def _colcounts(n, Cp, Ci, parent):
    counts = np.ones(n, np.int64)
    mark = np.full(n, -1, np.int64)
    for k in range(n):
        mark[k] = k
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            if i > k:
                continue
            while mark[i] != k:
                counts[i] += 1
                mark[i] = k
                i = parent[i]
    return counts


@numba.njit(cache=True)
def _numeric(n, Cp, Ci, Cx, parent, Lp, Li, Lx, pivot_rel):
    nxt = Lp[:-1].copy()
    x = np.zeros(n, np.complex128)
    stack = np.empty(n, np.int64)
    mark = np.full(n, -1, np.int64)
    maxpiv = 0.0
    for k in range(n):
        # nonzero pattern of row k of L, in topological order, via the etree
        top = n
        mark[k] = k
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            if i > k:
                continue
            x[i] = Cx[p]
            length = 0
            while mark[i] != k:
                stack[length] = i
                length += 1
                mark[i] = k
                i = parent[i]
            while length > 0:
                top -= 1
                length -= 1
                stack[top] = stack[length]
        d = x[k].real
        x[k] = 0.0
        for t in range(top, n):
            i = stack[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, nxt[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki.real * lki.real + lki.imag * lki.imag
            p = nxt[i]
            nxt[i] += 1
            Li[p] = k
            Lx[p] = np.conj(lki)
        if not np.isfinite(d) or d <= pivot_rel * maxpiv:
            return k, d
        if d > maxpiv:
            maxpiv = d
        p = nxt[k]
        nxt[k] += 1
        Li[p] = k
        Lx[p] = np.sqrt(d)
    return -1, 0.0


@numba.njit(cache=True)
def _solve(n, Lp, Li, Lx, y):
    for j in range(n):
        y[j] = y[j] / Lx[Lp[j]]
        yj = y[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            y[Li[p]] -= Lx[p] * yj
    for j in range(n - 1, -1, -1):
        s = y[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= np.conj(Lx[p]) * y[Li[p]]
        y[j] = s / Lx[Lp[j]].real
    return y


class Symbolic:
    """Pattern-dependent part of the factorization, reusable across values and shifts."""

    def __init__(self, H: sp.spmatrix, ordering: Ordering | None = None):
        H = sp.csc_matrix(H)
        H.sort_indices()
        n = H.shape[0]
        self.n = n
        self.indptr = H.indptr.copy()
        self.indices = H.indices.copy()
        self.ordering = ordering if ordering is not None else fill_order(H)
        perm = self.ordering.perm
        # permuted upper triangle, full diagonal, entries pointing back into H.data
        Hc = sp.csc_matrix((np.arange(1, H.nnz + 1, dtype=np.float64), H.indices, H.indptr), shape=H.shape)
        Hc = Hc + sp.diags(np.full(n, 0.5), format="csc")  # diagonal slots; 0.5 marks "absent"
        Ct = Hc[perm][:, perm]
        Ct = sp.triu(Ct, format="csc")
        Ct.sort_indices()
        self.Cp = Ct.indptr.astype(np.int64)
        self.Ci = Ct.indices.astype(np.int64)
        src = np.floor(Ct.data).astype(np.int64) - 1  # -1 where the diagonal was absent in H
        self.gather = src
        self.diagpos = self.Cp[1:] - 1
        self.parent = _etree(n, self.Cp, self.Ci)
        counts = _colcounts(n, self.Cp, self.Ci, self.parent)
        self.Lp = np.zeros(n + 1, np.int64)
        np.cumsum(counts, out=self.Lp[1:])

    @property
    def nnz_L(self) -> int:
        return int(self.Lp[-1])

    def matches(self, H: sp.csc_matrix) -> bool:
        return (H.shape[0] == self.n and np.array_equal(H.indptr, self.indptr)
                and np.array_equal(H.indices, self.indices))

    def values(self, H: sp.csc_matrix) -> np.ndarray:
        data = np.concatenate([H.data.astype(np.complex128), [0.0]])
        return data[self.gather]

    def factor(self, Cx: np.ndarray, shift=0.0, pivot_rel: float = PIVOT_REL):
        Cx = Cx.copy()
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.n,))
        Cx[self.diagpos] -= shift[self.ordering.perm]
        Li = np.empty(self.nnz_L, np.int64)
        Lx = np.empty(self.nnz_L, np.complex128)
        k, d = _numeric(self.n, self.Cp, self.Ci, Cx, self.parent, self.Lp, Li, Lx, pivot_rel)
        if k >= 0:
            return NotPositiveDefinite(int(k), float(d))
        return CholFactor(self.n, self.ordering, self.Lp, Li, Lx, np.array(shift))


@dataclass(frozen=True)
class NotPositiveDefinite:
    """Outcome of a failed factorization: the pivot position and its value."""
    index: int
    pivot: float

    def __bool__(self):
        return False


@dataclass(frozen=True, eq=False)
class CholFactor:
    n: int
    ordering: Ordering
    Lp: np.ndarray
    Li: np.ndarray
    Lx: np.ndarray
    shift: np.ndarray

    @property
    def L(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.Lx, self.Li, self.Lp), shape=(self.n, self.n))

    @property
    def nnz(self) -> int:
        return len(self.Lx)


_CACHE: "OrderedDict[tuple, Symbolic]" = OrderedDict()
_CACHE_SIZE = 16


def analyze(H: sp.spmatrix) -> Symbolic:
    """Symbolic analysis of ``H``'s pattern, cached by pattern."""
    H = _as_csc(H)
    key = (H.shape[0], H.nnz, hash(H.indptr.tobytes()), hash(H.indices.tobytes()))
    sym = _CACHE.get(key)
    if sym is not None and sym.matches(H):
        _CACHE.move_to_end(key)
        return sym
    sym = Symbolic(H)
    _CACHE[key] = sym
    if len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return sym


def _as_csc(H) -> sp.csc_matrix:
    H = sp.csc_matrix(H, dtype=np.complex128)
    if not H.has_sorted_indices:
        H = H.sorted_indices()
    if not H.has_canonical_format:
        H.sum_duplicates()
    return H


def cholesky(H: sp.spmatrix, shift=0.0, *, symbolic: Symbolic | None = None,
             pivot_rel: float = PIVOT_REL) -> CholFactor | NotPositiveDefinite:
    """Factor P (H - diag(shift)) P^T = L L^H.

    Returns :class:`NotPositiveDefinite` (falsy) rather than raising when a
    pivot fails; nonfinite input raises ``ValueError``.
    """
    H = _as_csc(H)
    if H.shape[0] != H.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(H.data)) or not np.all(np.isfinite(shift)):
        raise ValueError("matrix or shift has nonfinite entries")
    sym = symbolic if symbolic is not None else analyze(H)
    return sym.factor(sym.values(H), shift, pivot_rel)


def solve(factor: CholFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve (H - diag(shift)) x = rhs with a computed factor."""
    rhs = np.asarray(rhs)
    if rhs.shape[0] != factor.n:
        raise ValueError(f"rhs has length {rhs.shape[0]}, factor is {factor.n}x{factor.n}")
    perm = factor.ordering.perm
    if rhs.ndim == 2:
        return np.column_stack([solve(factor, rhs[:, j]) for j in range(rhs.shape[1])])
    y = rhs.astype(np.complex128)[perm]
    y = _solve(factor.n, factor.Lp, factor.Li, factor.Lx, y)
    out = np.empty_like(y)
    out[perm] = y
    return out
