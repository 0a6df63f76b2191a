"""Binary interaction matrices and the sparse/dense kernels built on them.

Dense matrices are plain float64 ``numpy`` arrays. Anything that feeds a
vectorized solve is kept in Fortran (column-major) order so that
:func:`vec` is a view rather than a copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


def vec(M: np.ndarray) -> np.ndarray:
    """Stack the columns of ``M`` left to right into a flat vector."""
    return np.asarray(M).ravel(order="F")


def unvec(v: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
    """Inverse of :func:`vec`; returns a column-major ``n_rows x n_cols`` view."""
    v = np.asarray(v)
    if v.size != n_rows * n_cols:
        raise DimensionError(f"cannot unvec length {v.size} into {n_rows}x{n_cols}")
    return v.reshape((n_rows, n_cols), order="F")


def as_dense(M, n_rows: int | None = None, n_cols: int | None = None) -> np.ndarray:
    """Coerce to a finite float64 column-major array, optionally checking shape."""
    A = np.asfortranarray(np.asarray(M, dtype=np.float64))
    if A.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got ndim={A.ndim}")
    if n_rows is not None and A.shape[0] != n_rows:
        raise DimensionError(f"expected {n_rows} rows, got {A.shape[0]}")
    if n_cols is not None and A.shape[1] != n_cols:
        raise DimensionError(f"expected {n_cols} columns, got {A.shape[1]}")
    return A


@dataclass(frozen=True, eq=False)
class BinaryInteractionMatrix:
    """Sparse 0/1 user-item matrix with both row (CSR) and column (CSC) access.

    Build instances with :meth:`from_coordinates` or :meth:`from_dense`; the
    constructor trusts its inputs.
    """

    csr: sp.csr_matrix
    csc: sp.csc_matrix

    @classmethod
    def from_coordinates(cls, users, items, n_users: int | None = None,
                         n_items: int | None = None) -> "BinaryInteractionMatrix":
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        if users.shape != items.shape:
            raise DimensionError("users and items must have equal length")
        if users.size and (users.min() < 0 or items.min() < 0):
            raise ValueError("coordinates must be non-negative")
        if n_users is None:
            n_users = int(users.max()) + 1 if users.size else 0
        if n_items is None:
            n_items = int(items.max()) + 1 if items.size else 0
        if users.size and (users.max() >= n_users or items.max() >= n_items):
            raise ValueError("coordinate out of bounds")
        # duplicates collapse to a single 1
        keys = np.unique(users * np.int64(max(n_items, 1)) + items)
        u, i = np.divmod(keys, np.int64(max(n_items, 1)))
        data = np.ones(keys.size, dtype=np.float64)
        csr = sp.csr_matrix((data, (u, i)), shape=(n_users, n_items))
        csr.sort_indices()
        return cls(csr=csr, csc=csr.tocsc())

    @classmethod
    def from_dense(cls, X) -> "BinaryInteractionMatrix":
        X = np.asarray(X)
        u, i = np.nonzero(X)
        return cls.from_coordinates(u, i, X.shape[0], X.shape[1])

    @classmethod
    def from_scipy(cls, M) -> "BinaryInteractionMatrix":
        coo = sp.coo_matrix(M)
        mask = coo.data != 0
        return cls.from_coordinates(coo.row[mask], coo.col[mask], *coo.shape)

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def n_users(self) -> int:
        return self.csr.shape[0]

    @property
    def n_items(self) -> int:
        return self.csr.shape[1]

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column indices of the stored ones, in CSR (user-major) order."""
        rows = np.repeat(np.arange(self.n_users), np.diff(self.csr.indptr))
        return rows, self.csr.indices.astype(np.int64)

    def row_items(self, u: int) -> np.ndarray:
        return self.csr.indices[self.csr.indptr[u]:self.csr.indptr[u + 1]]

    def col_users(self, i: int) -> np.ndarray:
        return self.csc.indices[self.csc.indptr[i]:self.csc.indptr[i + 1]]

    def select_rows(self, rows) -> "BinaryInteractionMatrix":
        return BinaryInteractionMatrix.from_scipy(self.csr[np.asarray(rows)])

    def transpose(self) -> "BinaryInteractionMatrix":
        return BinaryInteractionMatrix(csr=self.csc.T.tocsr(), csc=self.csr.T.tocsc())

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()


@dataclass(frozen=True, eq=False)
class SparsePattern:
    """Real values attached to the stored coordinates of an interaction matrix.

    ``values[k]`` belongs to coordinate ``(rows[k], cols[k])``; the coordinates
    are those of ``X.coordinates()`` (or of the transpose).
    """

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple[int, int]

    def tocsr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, (self.rows, self.cols)), shape=self.shape)

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.values
        return out


def spmm(X: BinaryInteractionMatrix, D) -> np.ndarray:
    """``X @ D`` for a dense ``D`` with ``X.n_items`` rows."""
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != X.n_items:
        raise DimensionError(f"spmm: X is {X.shape}, D is {D.shape}")
    return np.asfortranarray(X.csr @ D)


def spmm_t(X: BinaryInteractionMatrix, D) -> np.ndarray:
    """``X.T @ D`` for a dense ``D`` with ``X.n_users`` rows."""
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != X.n_users:
        raise DimensionError(f"spmm_t: X is {X.shape}, D is {D.shape}")
    return np.asfortranarray(X.csc.T @ D)


def _row_dots(A: np.ndarray, B: np.ndarray, rows: np.ndarray, cols: np.ndarray,
              chunk: int = 1 << 16) -> np.ndarray:
    out = np.empty(rows.size, dtype=np.float64)
    for start in range(0, rows.size, chunk):
        stop = start + chunk
        out[start:stop] = np.einsum("kd,kd->k", A[rows[start:stop]], B[cols[start:stop]])
    return out


def sddmm(X: BinaryInteractionMatrix, A, Bt) -> SparsePattern:
    """Sampled product ``X ⊙ (A @ Bt.T)``: one inner product per stored coordinate."""
    A = np.asarray(A, dtype=np.float64)
    Bt = np.asarray(Bt, dtype=np.float64)
    if A.shape[0] != X.n_users or Bt.shape[0] != X.n_items or A.shape[1] != Bt.shape[1]:
        raise DimensionError(f"sddmm: X is {X.shape}, A is {A.shape}, Bt is {Bt.shape}")
    rows, cols = X.coordinates()
    return SparsePattern(rows, cols, _row_dots(A, Bt, rows, cols), X.shape)


def sddmm_t(X: BinaryInteractionMatrix, A, Bt) -> SparsePattern:
    """Sampled product on the transposed pattern: ``Xᵀ ⊙ (A @ Bt.T)``.

    ``A`` has ``X.n_items`` rows and ``Bt`` has ``X.n_users`` rows.
    """
    A = np.asarray(A, dtype=np.float64)
    Bt = np.asarray(Bt, dtype=np.float64)
    if A.shape[0] != X.n_items or Bt.shape[0] != X.n_users or A.shape[1] != Bt.shape[1]:
        raise DimensionError(f"sddmm_t: X is {X.shape}, A is {A.shape}, Bt is {Bt.shape}")
    users, items = X.coordinates()
    return SparsePattern(items, users, _row_dots(A, Bt, items, users), (X.n_items, X.n_users))


def sample(X: BinaryInteractionMatrix, Y) -> SparsePattern:
    """``X ⊙ Y`` for a dense ``Y`` of the same shape as ``X``."""
    Y = np.asarray(Y)
    if Y.shape != X.shape:
        raise DimensionError(f"sample: X is {X.shape}, Y is {Y.shape}")
    rows, cols = X.coordinates()
    return SparsePattern(rows, cols, np.asarray(Y[rows, cols], dtype=np.float64), X.shape)


def gram_dense(X: BinaryInteractionMatrix) -> np.ndarray:
    """Dense ``XᵀX`` (item co-occurrence counts)."""
    G = (X.csc.T @ X.csc).toarray()
    return np.asfortranarray(G)
