"""Fill-reducing symmetric ordering (minimum degree on the elimination graph)."""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Ordering:
    perm: np.ndarray  # new position i holds original index perm[i]
    inverse: np.ndarray

    @classmethod
    def from_perm(cls, perm) -> "Ordering":
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        if not np.array_equal(np.sort(perm), np.arange(len(perm))):
            raise ValueError("not a permutation")
        return cls(perm, inv)

    @classmethod
    def natural(cls, n: int) -> "Ordering":
        return cls.from_perm(np.arange(n))

    def __len__(self):
        return len(self.perm)


def fill_order(pattern: sp.spmatrix) -> Ordering:
    """Minimum-degree ordering of a symmetric sparsity pattern.

    Nodes are eliminated greedily by current degree in the elimination graph,
    ties broken by lowest index, so the result is deterministic.
    """
    A = sp.csr_matrix(pattern)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("pattern must be square")
    indptr, indices = A.indptr, A.indices
    adj = [set(indices[indptr[i]:indptr[i + 1]].tolist()) - {i} for i in range(n)]
    for i in range(n):
        for j in adj[i]:
            adj[j].add(i)  # symmetrize defensively
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    perm = []
    while heap:
        deg, v = heapq.heappop(heap)
        if done[v] or deg != len(adj[v]):
            continue
        done[v] = True
        perm.append(v)
        nbrs = adj[v]
        for u in nbrs:
            au = adj[u]
            au.discard(v)
            au |= nbrs
            au.discard(u)
            heapq.heappush(heap, (len(au), u))
        adj[v] = set()
    return Ordering.from_perm(perm)
