"""Fill-reducing symmetric orderings.

The default is a minimum-degree ordering on the pattern of A + A^T using a
quotient graph with element absorption and the approximate external degree
of Amestoy, Davis and Duff.  Ties are broken by smallest index so the
ordering is deterministic; a graph with no edges therefore orders as the
identity.  Reverse Cuthill-McKee (via scipy) is available as a fallback.
"""

from __future__ import annotations

import heapq

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .sparse import Permutation

__all__ = ["reorder", "min_degree_order", "rcm_order"]


def _symmetric_pattern(a: sp.csr_matrix) -> sp.csr_matrix:
    pat = sp.csr_matrix(
        (np.ones_like(a.data), a.indices, a.indptr), shape=a.shape
    )
    pat = (pat + pat.T).tocsr()
    pat.sum_duplicates()
    pat.sort_indices()
    return pat


def min_degree_order(a: sp.csr_matrix) -> np.ndarray:
    """Elimination order (old indices in elimination sequence) by
    approximate minimum degree on the pattern of A + A^T."""
    n = a.shape[0]
    pat = _symmetric_pattern(a)
    adj = []
    for i in range(n):
        cols = pat.indices[pat.indptr[i]:pat.indptr[i + 1]]
        adj.append(set(int(c) for c in cols if c != i))

    elems: dict[int, set[int]] = {}
    elem_of: list[list[int]] = [[] for _ in range(n)]
    degree = [len(adj[i]) for i in range(n)]
    heap = [(degree[i], i) for i in range(n)]
    heapq.heapify(heap)
    eliminated = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.intp)
    next_eid = 0

    for k in range(n):
        while True:
            d, p = heapq.heappop(heap)
            if not eliminated[p] and d == degree[p]:
                break
        eliminated[p] = True
        order[k] = p

        # pivot clique: remaining adjacency plus members of adjacent elements
        lp = set(adj[p])
        for e in elem_of[p]:
            if e in elems:
                lp |= elems[e]
        lp.discard(p)
        lp = {i for i in lp if not eliminated[i]}
        for e in elem_of[p]:
            elems.pop(e, None)
        adj[p] = set()
        elem_of[p] = []
        if not lp:
            continue
        eid = next_eid
        next_eid += 1
        elems[eid] = lp

        # |L_e \ L_p| for every live element touching the clique
        w: dict[int, int] = {}
        for i in lp:
            for e in elem_of[i]:
                if e in elems and e != eid:
                    if e not in w:
                        w[e] = len(elems[e])
                    w[e] -= 1
        # absorb elements fully covered by the new one
        for e, cnt in w.items():
            if cnt == 0:
                elems.pop(e, None)

        lp_sz = len(lp)
        for i in lp:
            ai = adj[i]
            ai.discard(p)
            ai -= lp
            kept = [e for e in elem_of[i] if e in elems]
            kept.append(eid)
            elem_of[i] = kept
            d_new = len(ai) + lp_sz - 1
            for e in kept:
                if e != eid:
                    d_new += w.get(e, len(elems[e]))
            d_new = min(d_new, n - k - 1)
            degree[i] = d_new
            heapq.heappush(heap, (d_new, i))

    return order


def rcm_order(a: sp.csr_matrix) -> np.ndarray:
    pat = _symmetric_pattern(a)
    return np.asarray(reverse_cuthill_mckee(pat, symmetric_mode=True), dtype=np.intp)


def reorder(a: sp.csr_matrix, method: str = "amd") -> Permutation:
    """Symmetric fill-reducing ordering of a square sparse matrix."""
    if a.shape[0] != a.shape[1]:
        raise ValueError("reorder requires a square matrix")
    if method == "amd":
        order = min_degree_order(a)
    elif method == "rcm":
        order = rcm_order(a)
    else:
        raise ValueError(f"unknown ordering method {method!r}")
    return Permutation.from_inverse(order)
