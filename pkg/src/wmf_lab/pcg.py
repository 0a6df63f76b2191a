"""Preconditioned conjugate gradients over apply-only SPD operators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

#: recurrence residual is replaced by ``b - A x`` this often
RESIDUAL_REFRESH = 50


class SolverError(RuntimeError):
    pass


class BreakdownError(SolverError):
    """``pᵀAp <= 0``: the operator is not positive definite along ``p``."""

    def __init__(self, iteration: int, curvature: float, column: int | None = None):
        where = "" if column is None else f" (column {column})"
        super().__init__(f"PCG breakdown at iteration {iteration}{where}: "
                         f"p'Ap = {curvature:.3e} <= 0; operator is not SPD")
        self.iteration = iteration
        self.curvature = curvature
        self.column = column


class NonFiniteError(SolverError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"PCG produced non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    """``tolerance`` is the absolute threshold on ``||r_k||_2``."""

    tolerance: float = 1e-8
    max_iter: int | None = None
    record_history: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @classmethod
    def relative(cls, b: np.ndarray, rel_tol: float = 1e-8, max_iter: int | None = None,
                 record_history: bool = False) -> "SolverConfig":
        """Config with ``tolerance = rel_tol * ||b||`` (floored away from zero)."""
        tol = rel_tol * float(np.linalg.norm(b))
        return cls(max(tol, np.finfo(float).tiny), max_iter, record_history)


@dataclass
class SolveReport:
    iterations_used: int
    final_residual_norm: float
    converged: bool
    residual_history: list[float] | None = field(default=None, repr=False)


def _as_apply(op) -> Callable[[np.ndarray], np.ndarray]:
    if op is None:
        return lambda v: v.copy()
    if hasattr(op, "matvec"):
        return op.matvec
    if callable(op):
        return op
    A = np.asarray(op)
    return lambda v: A @ v


def pcg_solve(op, precond, b, x0=None, cfg: SolverConfig | None = None):
    """Solve ``A x = b`` for SPD ``A`` given only ``v -> A v``.

    ``op`` and ``precond`` may be objects with ``matvec``, plain callables,
    or dense arrays; ``precond=None`` means no preconditioning. Returns
    ``(x, SolveReport)``; the last iterate is returned even when the budget
    runs out, with ``converged=False``.
    """
    A = _as_apply(op)
    M = _as_apply(precond)
    b = np.asarray(b, dtype=np.float64).ravel()
    cfg = cfg or SolverConfig()
    n = b.size
    max_iter = cfg.max_iter if cfg.max_iter is not None else max(n, 1)
    eps = cfg.tolerance

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    if x.size != n:
        raise ValueError(f"x0 has length {x.size}, b has length {n}")
    r = b - A(x) if x0 is not None else b.copy()
    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    history = [] if cfg.record_history else None

    k = 0
    rnorm = float(np.linalg.norm(r))
    while True:
        if history is not None:
            history.append(rnorm)
        if rnorm <= eps or k >= max_iter:
            break
        Ap = A(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp):
            raise NonFiniteError(k, "curvature p'Ap")
        if pAp <= 0.0:
            raise BreakdownError(k, pAp)
        step = rz / pAp
        x += step * p
        if (k + 1) % RESIDUAL_REFRESH == 0:
            r = b - A(x)
        else:
            r -= step * Ap
        z = M(r)
        rz_next = float(r @ z)
        if not np.isfinite(rz_next):
            raise NonFiniteError(k, "residual")
        beta = rz_next / rz if rz != 0.0 else 0.0
        p = z + beta * p
        rz = rz_next
        rnorm = float(np.linalg.norm(r))
        k += 1

    return x, SolveReport(k, rnorm, rnorm <= eps, history)


def pcg_solve_columns(apply_block, precond_block, B, X0=None,
                      tolerance: float | Sequence[float] = 1e-8,
                      max_iter: int | None = None):
    """Run independent PCG solves on every column of ``B`` in lock step.

    Each column carries its own step sizes and stopping test, so the result
    is the same as solving column by column with :func:`pcg_solve`; the
    point is that every operator application handles all active columns
    with one sparse/dense matrix product. ``apply_block`` and
    ``precond_block`` map an ``n x k`` matrix to an ``n x k`` matrix.
    Returns ``(X, [SolveReport per column])``.
    """
    B = np.asarray(B, dtype=np.float64)
    n, k = B.shape
    eps = np.broadcast_to(np.asarray(tolerance, dtype=np.float64), (k,)).copy()
    max_iter = max_iter if max_iter is not None else max(n, 1)
    M = precond_block if precond_block is not None else (lambda R: R.copy())

    X = np.zeros((n, k), order="F") if X0 is None else np.array(X0, dtype=np.float64, order="F")
    R = B - apply_block(X) if X0 is not None else B.copy(order="F")
    Z = M(R)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    rnorm = np.linalg.norm(R, axis=0)
    iters = np.zeros(k, dtype=np.int64)
    active = rnorm > eps

    step_no = 0
    while active.any() and step_no < max_iter:
        AP = apply_block(P)
        pAp = np.einsum("ij,ij->j", P, AP)
        bad = active & ~(pAp > 0.0)
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            if not np.isfinite(pAp[j]):
                raise NonFiniteError(int(iters[j]), f"curvature in column {j}")
            raise BreakdownError(int(iters[j]), float(pAp[j]), column=j)
        step = np.where(active, rz / np.where(active, pAp, 1.0), 0.0)
        X += P * step
        step_no += 1
        if step_no % RESIDUAL_REFRESH == 0:
            R = np.where(active, B - apply_block(X), R)
        else:
            R -= AP * step
        Z = M(R)
        rz_next = np.einsum("ij,ij->j", R, Z)
        if not np.all(np.isfinite(rz_next[active])):
            raise NonFiniteError(step_no, "residual")
        beta = np.where(active & (rz != 0.0), rz_next / np.where(rz != 0.0, rz, 1.0), 0.0)
        P = np.where(active, Z + P * beta, P)
        rz = np.where(active, rz_next, rz)
        iters += active
        rnorm = np.where(active, np.linalg.norm(R, axis=0), rnorm)
        active = active & (rnorm > eps)

    reports = [SolveReport(int(iters[j]), float(rnorm[j]), bool(rnorm[j] <= eps[j]))
               for j in range(k)]
    return np.asfortranarray(X), reports
