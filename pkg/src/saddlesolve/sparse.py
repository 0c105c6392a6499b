"""Sparse-matrix plumbing shared by every other module.

Matrices are carried as ``scipy.sparse.csr_matrix`` in canonical form:
``indptr`` is the nondecreasing row-offset array, ``indices`` holds strictly
increasing column indices within each row, and duplicate entries are
forbidden.  Explicitly stored zeros are legal and are never pruned, so
assembly patterns stay stable across repeated assemblies.  Vectors are plain
1-D ``numpy`` float arrays.  All indices are 0-based internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SparseMatrix",
    "Permutation",
    "as_csr",
    "check_matrix",
    "spmv",
    "permute_scale",
]

SparseMatrix = sp.csr_matrix


def as_csr(a) -> sp.csr_matrix:
    """Coerce to canonical CSR (sorted indices, summed duplicates)."""
    m = sp.csr_matrix(a)
    m.sum_duplicates()
    m.sort_indices()
    return m


def check_matrix(a: sp.csr_matrix) -> None:
    """Validate the structural invariants; raises ValueError on violation."""
    if a.ndim != 2:
        raise ValueError("matrix must be 2-D")
    n, m = a.shape
    if a.indptr.shape != (n + 1,):
        raise ValueError("row offsets must have length nrows+1")
    if a.indptr[0] != 0 or a.indptr[-1] != a.data.size:
        raise ValueError("row offsets must start at 0 and end at nnz")
    if np.any(np.diff(a.indptr) < 0):
        raise ValueError("row offsets must be nondecreasing")
    if a.indices.size and (a.indices.min() < 0 or a.indices.max() >= m):
        raise ValueError("column index out of range")
    for i in range(n):
        cols = a.indices[a.indptr[i]:a.indptr[i + 1]]
        if np.any(np.diff(cols) <= 0):
            raise ValueError(f"row {i}: column indices not strictly increasing")


@dataclass(frozen=True)
class Permutation:
    """A bijection on [0, n).

    ``forward[old] = new`` gives the new position of each old index and
    ``inverse[new] = old`` the old index occupying each new slot.
    """

    forward: np.ndarray
    inverse: np.ndarray

    @staticmethod
    def identity(n: int) -> "Permutation":
        ar = np.arange(n)
        return Permutation(ar, ar.copy())

    @staticmethod
    def from_inverse(inverse) -> "Permutation":
        """Build from the new-slot -> old-index array (fancy-index order)."""
        inverse = np.asarray(inverse, dtype=np.intp)
        forward = np.empty_like(inverse)
        forward[inverse] = np.arange(inverse.size)
        return Permutation(forward, inverse)

    @staticmethod
    def from_forward(forward) -> "Permutation":
        forward = np.asarray(forward, dtype=np.intp)
        inverse = np.empty_like(forward)
        inverse[forward] = np.arange(forward.size)
        return Permutation(forward, inverse)

    @property
    def n(self) -> int:
        return self.forward.size

    def compose(self, first: "Permutation") -> "Permutation":
        """Return self applied after ``first`` (self o first)."""
        return Permutation.from_forward(self.forward[first.forward])

    def invert(self) -> "Permutation":
        return Permutation(self.inverse, self.forward)

    def check(self) -> None:
        n = self.n
        ar = np.arange(n)
        if self.inverse.size != n:
            raise ValueError("forward/inverse length mismatch")
        if not np.array_equal(np.sort(self.forward), ar):
            raise ValueError("forward is not a bijection")
        if not np.array_equal(self.forward[self.inverse], ar):
            raise ValueError("forward o inverse is not the identity")


def spmv(a: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix times dense vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ValueError(
            f"dimension mismatch: matrix is {a.shape[0]}x{a.shape[1]}, "
            f"vector has length {x.shape[0] if x.ndim == 1 else x.shape}"
        )
    return a @ x


def permute_scale(
    a: sp.csr_matrix,
    p: Permutation,
    q: Permutation,
    dr: np.ndarray,
    dc: np.ndarray,
) -> sp.csr_matrix:
    """Rescale by dr (rows) and dc (columns), then permute rows by p and
    columns by q.  Entry (i, j) of A lands at (p.forward[i], q.forward[j])
    scaled by dr[i]*dc[j].
    """
    n, m = a.shape
    dr = np.asarray(dr, dtype=np.float64)
    dc = np.asarray(dc, dtype=np.float64)
    if p.n != n or q.n != m or dr.size != n or dc.size != m:
        raise ValueError("permutation/scaling dimensions inconsistent with matrix")
    if np.any(dr <= 0) or np.any(dc <= 0):
        bad = int(np.argmax(dr <= 0)) if np.any(dr <= 0) else int(np.argmax(dc <= 0))
        raise ValueError(f"nonpositive scaling entry at index {bad}")
    scaled = sp.csr_matrix(
        (a.data * np.repeat(dr, np.diff(a.indptr)) * dc[a.indices],
         a.indices, a.indptr),
        shape=a.shape,
    )
    out = scaled[p.inverse, :][:, q.inverse]
    out = sp.csr_matrix(out)
    out.sort_indices()
    return out
