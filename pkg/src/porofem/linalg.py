"""Sparse storage and linear solves for the assembled block systems.

CSR storage and the LU factorization come from :mod:`scipy.sparse`; this
module adds a fixed-pattern triplet accumulator (so repeated Newton
assemblies only recompute values), residual-checked solves and block
placement helpers.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


def csr(a) -> sp.csr_matrix:
    """Canonical CSR copy: sorted column indices, duplicates summed."""
    m = sp.csr_matrix(a, dtype=float, copy=True)
    m.sum_duplicates()
    m.sort_indices()
    return m


def spmv(a: sp.csr_matrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if a.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {a.shape} times vector {x.shape}")
    return a @ x


class SparsityPattern:
    """Maps a fixed stream of (row, col) triplets onto CSR storage.

    Duplicates are summed with :func:`numpy.bincount`, which accumulates in
    input order, so the assembled values are deterministic.
    """

    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        self.shape = tuple(shape)
        key = rows * self.shape[1] + cols
        uniq, self.slot = np.unique(key, return_inverse=True)
        self.slot = self.slot.ravel()
        r = uniq // self.shape[1]
        self.indices = (uniq % self.shape[1]).astype(np.int32)
        self.indptr = np.zeros(self.shape[0] + 1, dtype=np.int32)
        np.cumsum(np.bincount(r, minlength=self.shape[0]), out=self.indptr[1:])
        self.nnz = len(uniq)

    def matrix(self, values) -> sp.csr_matrix:
        data = np.bincount(self.slot, weights=np.ravel(values), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


def block(blocks) -> sp.csr_matrix:
    """Monolithic CSR matrix from a nested list of blocks (``None`` for zero)."""
    return csr(sp.bmat(blocks, format="csr"))


def apply_dirichlet(a: sp.csr_matrix, rhs, dofs, values=None):
    """Symmetric elimination: known columns moved to the right-hand side, identity rows.

    Returns new (matrix, rhs); ``values`` defaults to zero.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    rhs = np.array(rhs, dtype=float)
    if len(dofs) == 0:
        return a, rhs
    vals = np.zeros(len(dofs)) if values is None else np.asarray(values, dtype=float)
    g = np.zeros(a.shape[1])
    g[dofs] = vals
    rhs -= a @ g
    keep = np.ones(a.shape[0])
    keep[dofs] = 0.0
    d = sp.diags(keep)
    out = csr(d @ a @ d + sp.diags(1.0 - keep))
    rhs[dofs] = vals
    return out, rhs


def replace_rows(a: sp.csr_matrix, rows, new_rows: sp.spmatrix) -> sp.csr_matrix:
    """Return ``a`` with the listed rows replaced by the rows of ``new_rows``."""
    rows = np.asarray(rows, dtype=np.int64)
    keep = np.ones(a.shape[0])
    keep[rows] = 0.0
    sel = sp.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(a.shape[0], len(rows)))
    return csr(sp.diags(keep) @ a + sel @ new_rows)


def solve(a, b, tol: float = 1e-12, max_iter: int | None = None, method: str = "direct", refine: int = 3):
    """Solve ``a x = b`` and check ``||a x - b|| <= tol ||b||``.

    ``method="direct"`` uses SuperLU with a minimum-degree ordering of
    A^T + A, diagonal-preferring threshold pivoting and a few steps of
    iterative refinement; ``"gmres"`` uses ILU-preconditioned restarted GMRES
    with ``max_iter`` defaulting to ten times the dimension.
    """
    a = sp.csc_matrix(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape != (n,):
        raise ValueError(f"incompatible system: matrix {a.shape}, rhs {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("non-finite right-hand side")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)

    if method == "direct":
        try:
            lu = spla.splu(
                a,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=1e-3,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # exactly singular
            raise SolverError(f"factorization failed: {exc}") from exc
        x = lu.solve(b)
        r = b - a @ x
        for _ in range(refine):
            if np.linalg.norm(r) <= tol * bnorm:
                break
            x += lu.solve(r)
            r = b - a @ x
    elif method == "gmres":
        max_iter = 10 * n if max_iter is None else max_iter
        ilu = spla.spilu(a, drop_tol=1e-6, fill_factor=20)
        m = spla.LinearOperator((n, n), ilu.solve)
        x, info = spla.gmres(a, b, M=m, rtol=tol, atol=0.0, restart=min(200, n), maxiter=max(1, max_iter // min(200, n)))
        r = b - a @ x
        if info < 0:
            raise SolverError("GMRES breakdown", np.linalg.norm(r) / bnorm)
    else:
        raise ValueError(f"unknown solver method {method!r}")

    res = np.linalg.norm(r) / bnorm
    if not np.isfinite(res) or res > tol:
        raise SolverError(f"{method} solve did not reach tolerance {tol:.1e}", res)
    return x


def dump_matrix_market(path, a) -> None:
    import scipy.io

    scipy.io.mmwrite(str(path), sp.coo_matrix(a))
