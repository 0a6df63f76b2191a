"""Brute-force dense references for tests and ``wmf-lab verify``.

Everything here materializes ``X``, ``W`` and the full Kronecker-structured
Gram matrices explicitly, so it is restricted to tiny problems. Nothing in
this module calls into the matrix-free code it is used to check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelKind

#: hard cap on n_users * n_items
MAX_ENTRIES = 10_000
#: hard cap on the dimension of an assembled Gram matrix
MAX_GRAM_DIM = 2_000


class OracleSizeError(ValueError):
    pass


def vec(M: np.ndarray) -> np.ndarray:
    return np.asarray(M).flatten(order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v).reshape((rows, cols), order="F")


@dataclass
class DenseProblem:
    """A fully materialized weighted problem.

    ``W`` may be any positive matrix, not only ``(alpha - 1) X + 1``.
    """

    X: np.ndarray
    W: np.ndarray
    lam: float
    kind: ModelKind

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.X.shape != self.W.shape:
            raise ValueError("X and W must have the same shape")
        if self.X.size > MAX_ENTRIES:
            raise OracleSizeError(f"oracle limited to {MAX_ENTRIES} entries, got {self.X.size}")
        if np.any(self.W <= 0):
            raise ValueError("weights must be positive")

    @classmethod
    def from_alpha(cls, X, alpha: float, lam: float, kind: ModelKind) -> "DenseProblem":
        X = np.asarray(X, dtype=np.float64)
        return cls(X, (alpha - 1.0) * X + 1.0, lam, kind)

    @property
    def n_users(self) -> int:
        return self.X.shape[0]

    @property
    def n_items(self) -> int:
        return self.X.shape[1]

    def design(self) -> np.ndarray:
        """The matrix multiplying ``U`` inside the prediction (``X``, or ``I`` for WMF)."""
        if self.kind is ModelKind.WMF:
            return np.eye(self.n_users)
        return self.X


def _guard(dim: int):
    if dim > MAX_GRAM_DIM:
        raise OracleSizeError(f"assembled Gram would be {dim}x{dim}")


def kron_identity_1(A, B, C, W):
    """Both sides of ``vec(Aᵀ(W⊙(A B Cᵀ))C) = (C⊗A)ᵀ diag(vec W) (C⊗A) vec(B)``."""
    lhs = vec(A.T @ (W * (A @ B @ C.T)) @ C)
    K = np.kron(C, A)
    rhs = K.T @ (vec(W)[:, None] * K) @ vec(B)
    return lhs, rhs


def kron_identity_2(A, B, C, W):
    """Both sides of ``vec((Wᵀ⊙(C Bᵀ Aᵀ))AB) = (AB⊗I)ᵀ diag(vec Wᵀ) (AB⊗I) vec(C)``."""
    AB = A @ B
    lhs = vec((W.T * (C @ B.T @ A.T)) @ AB)
    K = np.kron(AB, np.eye(C.shape[0]))
    rhs = K.T @ (vec(W.T)[:, None] * K) @ vec(C)
    return lhs, rhs


def dense_gram_assemble(problem: DenseProblem, side: str, fixed=None) -> np.ndarray:
    """Explicit regularized Gram matrix for one closed-form solve.

    ``side`` is ``"B"`` (full rank), ``"U"`` (``fixed`` is ``V``) or ``"V"``
    (``fixed`` is ``U``).
    """
    X, W, lam, kind = problem.X, problem.W, problem.lam, problem.kind
    n_items = problem.n_items
    if side == "B":
        _guard(n_items * n_items)
        K = np.kron(np.eye(n_items), X)
        H = K.T @ (vec(W)[:, None] * K)
        return H + lam * np.eye(H.shape[0])
    F = np.asarray(fixed, dtype=np.float64)
    d = F.shape[1]
    A = problem.design()
    if side == "U":
        V = F
        _guard(A.shape[1] * d)
        K = np.kron(V, A)
        H = K.T @ (vec(W)[:, None] * K)
        if kind is ModelKind.AWMF_DROPOUT:
            R = np.kron(V.T @ V, np.eye(A.shape[1]))
        elif kind is ModelKind.AWMF_DATA_WEIGHT_DECAY:
            R = np.kron(np.eye(d), X.T @ X)
        else:
            R = np.eye(H.shape[0])
        return H + lam * R
    if side == "V":
        U = F
        _guard(n_items * d)
        AU = A @ U
        K = np.kron(AU, np.eye(n_items))
        H = K.T @ (vec(W.T)[:, None] * K)
        if kind is ModelKind.AWMF_DROPOUT:
            R = np.kron(U.T @ U, np.eye(n_items))
        else:
            R = np.eye(H.shape[0])
        return H + lam * R
    raise ValueError(f"unknown side {side!r}")


def dense_rhs(problem: DenseProblem, side: str, fixed=None) -> np.ndarray:
    X, W = problem.X, problem.W
    A = problem.design()
    if side == "B":
        return vec(X.T @ (W * X))
    if side == "U":
        return vec(A.T @ (W * X) @ fixed)
    if side == "V":
        return vec((W.T * X.T) @ (A @ fixed))
    raise ValueError(f"unknown side {side!r}")


def dense_closed_form(problem: DenseProblem, side: str, fixed=None,
                      max_cond: float = 1e14) -> np.ndarray:
    """Direct solve of the assembled system; returns the unknown as a matrix."""
    H = dense_gram_assemble(problem, side, fixed)
    b = dense_rhs(problem, side, fixed)
    if np.linalg.cond(H) > max_cond:
        raise np.linalg.LinAlgError("assembled Gram matrix is singular")
    x = np.linalg.solve(H, b)
    if side == "B":
        return unvec(x, problem.n_items, problem.n_items)
    rows = problem.design().shape[1] if side == "U" else problem.n_items
    return unvec(x, rows, x.size // rows)


def dense_objective(problem: DenseProblem, point) -> float:
    X, W, lam, kind = problem.X, problem.W, problem.lam, problem.kind
    if kind is ModelKind.FULL_RANK:
        B = point
        return float(np.sum(W * (X - X @ B) ** 2) + lam * np.sum(B ** 2))
    U, V = point
    A = problem.design()
    P = A @ U @ V.T
    loss = float(np.sum(W * (X - P) ** 2))
    if kind is ModelKind.AWMF_DROPOUT:
        reg = np.sum((U @ V.T) ** 2)
    elif kind is ModelKind.AWMF_DATA_WEIGHT_DECAY:
        reg = np.sum((X @ U) ** 2) + np.sum(V ** 2)
    else:
        reg = np.sum(U ** 2) + np.sum(V ** 2)
    return loss + lam * float(reg)


def dense_gradient(problem: DenseProblem, point):
    X, W, lam, kind = problem.X, problem.W, problem.lam, problem.kind
    if kind is ModelKind.FULL_RANK:
        B = point
        return -2 * X.T @ (W * (X - X @ B)) + 2 * lam * B
    U, V = point
    A = problem.design()
    AU = A @ U
    R = W * (X - AU @ V.T)
    gU = -2 * A.T @ R @ V
    gV = -2 * R.T @ AU
    if kind is ModelKind.AWMF_DROPOUT:
        gU += 2 * lam * U @ (V.T @ V)
        gV += 2 * lam * V @ (U.T @ U)
    elif kind is ModelKind.AWMF_DATA_WEIGHT_DECAY:
        gU += 2 * lam * X.T @ (X @ U)
        gV += 2 * lam * V
    else:
        gU += 2 * lam * U
        gV += 2 * lam * V
    return gU, gV


def dense_objective_and_gradient(problem: DenseProblem, point):
    """Objective value and analytic gradient (``B`` or the pair ``(gU, gV)``)."""
    return dense_objective(problem, point), dense_gradient(problem, point)


def finite_difference_gradient(problem: DenseProblem, point, step: float = 1e-5):
    """Central differences of :func:`dense_objective`, entry by entry."""
    def fd(M, f):
        G = np.zeros_like(M)
        for idx in np.ndindex(M.shape):
            orig = M[idx]
            M[idx] = orig + step
            fp = f()
            M[idx] = orig - step
            fm = f()
            M[idx] = orig
            G[idx] = (fp - fm) / (2 * step)
        return G

    if problem.kind is ModelKind.FULL_RANK:
        B = np.array(point, dtype=np.float64)
        return fd(B, lambda: dense_objective(problem, B))
    U = np.array(point[0], dtype=np.float64)
    V = np.array(point[1], dtype=np.float64)
    f = lambda: dense_objective(problem, (U, V))  # noqa: E731
    return fd(U, f), fd(V, f)
