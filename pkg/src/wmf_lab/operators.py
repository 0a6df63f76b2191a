"""Matrix-free regularized Gram operators for the weighted normal equations.

Every operator acts on a matrix ``P`` shaped like the unknown (``B``, ``U`` or
``V``) and returns the matrix whose ``vec`` equals ``H @ vec(P)``. The weight
matrix ``W = (alpha - 1) X + 1`` is never formed: each weighted term is split
into an unweighted dense part plus ``(alpha - 1)`` times a sampled (SDDMM)
part living on the nonzeros of ``X``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .sparse import (
    BinaryInteractionMatrix,
    DimensionError,
    as_dense,
    gram_dense,
    sample,
    sddmm,
    spmm,
    spmm_t,
    unvec,
    vec,
)


class PreconditionerError(np.linalg.LinAlgError):
    """A preconditioner block could not be factorized (rank deficiency)."""


class RegKind(enum.Enum):
    WEIGHT_DECAY = "weight-decay"
    DROPOUT = "dropout"
    DATA_WEIGHT_DECAY = "data-weight-decay"


@dataclass(frozen=True)
class WeightScheme:
    """Scalar up-weighting of observed entries: ``W = (alpha - 1) X + 1``."""

    alpha: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 1.0:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")

    @property
    def excess(self) -> float:
        return float(self.alpha) - 1.0

    def dense(self, X: BinaryInteractionMatrix) -> np.ndarray:
        """Materialized weights; only for tests and tiny problems."""
        return self.excess * X.toarray() + 1.0


class GramCache:
    """Per-``X`` cache of ``XᵀX`` and its eigendecomposition."""

    def __init__(self, X: BinaryInteractionMatrix):
        self.X = X
        self._gram = None
        self._eig = None

    @property
    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = gram_dense(self.X)
        return self._gram

    @property
    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        if self._eig is None:
            s, R = np.linalg.eigh(self.gram)
            self._eig = (np.clip(s, 0.0, None), np.asfortranarray(R))
        return self._eig


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return lam


def _gram_apply(X: BinaryInteractionMatrix, P: np.ndarray, XP: np.ndarray | None = None):
    if XP is None:
        XP = spmm(X, P)
    return spmm_t(X, XP)


class _Operator:
    shape_of_unknown: tuple[int, int]

    @property
    def dim(self) -> int:
        r, c = self.shape_of_unknown
        return r * c

    def apply(self, P: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def matvec(self, p: np.ndarray) -> np.ndarray:
        return vec(self.apply(unvec(p, *self.shape_of_unknown)))

    def _conform(self, P) -> np.ndarray:
        return as_dense(P, *self.shape_of_unknown)


@dataclass(frozen=True, eq=False)
class FullRankGramOp(_Operator):
    """``H(B, lam) = (I ⊗ Xᵀ) diag(vec W) (I ⊗ X) + lam I``.

    The operator is block diagonal over the columns of ``B``: column ``j`` only
    sees the weights in column ``j`` of ``W``. Passing ``columns`` restricts it
    exactly to that block of columns, which is how the trainer avoids the
    ``n_items**2`` system.
    """

    X: BinaryInteractionMatrix
    weights: WeightScheme
    lam: float
    columns: np.ndarray | None = None

    def __post_init__(self):
        _check_lambda(self.lam)
        if self.columns is not None:
            object.__setattr__(self, "columns", np.asarray(self.columns, dtype=np.int64))

    @property
    def shape_of_unknown(self):
        k = self.X.n_items if self.columns is None else self.columns.size
        return (self.X.n_items, k)

    def apply(self, P) -> np.ndarray:
        P = self._conform(P)
        X = self.X
        XP = spmm(X, P)
        out = spmm_t(X, XP)
        if self.weights.excess:
            S = self._sampled(XP)
            out += self.weights.excess * (X.csc.T @ S).toarray()
        if self.lam:
            out += self.lam * P
        return np.asfortranarray(out)

    def _sampled(self, XP: np.ndarray) -> sp.csr_matrix:
        if self.columns is None:
            return sample(self.X, XP).tocsr()
        # coordinates of X restricted to the block's columns
        rows, cols = self.X.coordinates()
        pos = np.full(self.X.n_items, -1, dtype=np.int64)
        pos[self.columns] = np.arange(self.columns.size)
        keep = pos[cols] >= 0
        r, c = rows[keep], pos[cols[keep]]
        return sp.csr_matrix((XP[r, c], (r, c)), shape=XP.shape)


def _factor_checks(X: BinaryInteractionMatrix, F: np.ndarray, name: str) -> np.ndarray:
    F = as_dense(F)
    if F.shape[0] != X.n_items:
        raise DimensionError(f"{name} must have {X.n_items} rows, got {F.shape[0]}")
    return F


@dataclass(frozen=True, eq=False)
class FactorGramOpU(_Operator):
    """Gram operator for the ``U`` half-step of the asymmetric models (``V`` fixed)."""

    X: BinaryInteractionMatrix
    V: np.ndarray
    weights: WeightScheme
    reg: RegKind
    lam: float
    VtV: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_lambda(self.lam)
        V = _factor_checks(self.X, self.V, "V")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "VtV", V.T @ V)

    @property
    def shape_of_unknown(self):
        return self.V.shape

    def apply(self, P) -> np.ndarray:
        P = self._conform(P)
        X, V = self.X, self.V
        XP = spmm(X, P)
        XtXP = spmm_t(X, XP)
        out = XtXP @ self.VtV
        if self.weights.excess:
            S = sddmm(X, XP, V).tocsr()
            out += self.weights.excess * (X.csc.T @ (S @ V))
        if self.lam:
            if self.reg is RegKind.DROPOUT:
                out += self.lam * (P @ self.VtV)
            elif self.reg is RegKind.WEIGHT_DECAY:
                out += self.lam * P
            else:
                out += self.lam * XtXP
        return np.asfortranarray(out)


@dataclass(frozen=True, eq=False)
class FactorGramOpV(_Operator):
    """Gram operator for the ``V`` half-step of the asymmetric models (``U`` fixed)."""

    X: BinaryInteractionMatrix
    U: np.ndarray
    weights: WeightScheme
    reg: RegKind
    lam: float
    XU: np.ndarray = field(init=False, repr=False)
    XUtXU: np.ndarray = field(init=False, repr=False)
    UtU: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_lambda(self.lam)
        U = _factor_checks(self.X, self.U, "U")
        XU = spmm(self.X, U)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "XU", XU)
        object.__setattr__(self, "XUtXU", XU.T @ XU)
        object.__setattr__(self, "UtU", U.T @ U)

    @property
    def shape_of_unknown(self):
        return self.U.shape

    def apply(self, P) -> np.ndarray:
        P = self._conform(P)
        out = P @ self.XUtXU
        if self.weights.excess:
            S = sddmm(self.X, self.XU, P).tocsr()
            out += self.weights.excess * np.asarray(S.T @ self.XU)
        if self.lam:
            if self.reg is RegKind.DROPOUT:
                out += self.lam * (P @ self.UtU)
            else:
                # the data-weight-decay penalty on V is plain ||V||^2
                out += self.lam * P
        return np.asfortranarray(out)


@dataclass(frozen=True, eq=False)
class UserGramOp(_Operator):
    """Gram operator for the free user factors of WMF (``V`` fixed).

    This is the ``A = I`` instance of the first Kronecker identity; the
    trainer solves it row by row but the stacked form is kept for checks.
    """

    X: BinaryInteractionMatrix
    V: np.ndarray
    weights: WeightScheme
    lam: float

    def __post_init__(self):
        _check_lambda(self.lam)
        object.__setattr__(self, "V", _factor_checks(self.X, self.V, "V"))

    @property
    def shape_of_unknown(self):
        return (self.X.n_users, self.V.shape[1])

    def apply(self, P) -> np.ndarray:
        P = self._conform(P)
        V = self.V
        out = P @ (V.T @ V)
        if self.weights.excess:
            S = sddmm(self.X, P, V).tocsr()
            out += self.weights.excess * (S @ V)
        return np.asfortranarray(out + self.lam * P)


def rhs_full_rank(X: BinaryInteractionMatrix, weights: WeightScheme,
                  cache: GramCache | None = None, target=None) -> np.ndarray:
    """``Xᵀ (W ⊙ T)`` with ``T = X`` by default.

    For binary ``X`` and ``T = X`` this is exactly ``alpha XᵀX``. A different
    target (dense or scipy sparse, same shape as ``X``) gives the right-hand
    side of the generalized problem ``min ||sqrt(W) ⊙ (T - XB)||``.
    """
    if target is None:
        G = cache.gram if cache is not None else gram_dense(X)
        return np.asfortranarray(weights.alpha * G)
    if hasattr(target, "tocsr"):
        T = target.tocsr().astype(np.float64)
        if T.shape != X.shape:
            raise DimensionError(f"target is {T.shape}, X is {X.shape}")
        WT = T + weights.excess * T.multiply(X.csr)
        return np.asfortranarray((X.csc.T @ WT).toarray())
    T = as_dense(target, *X.shape)
    WT = T.copy()
    rows, cols = X.coordinates()
    WT[rows, cols] *= weights.alpha
    return spmm_t(X, WT)


def rhs_factor_u(X: BinaryInteractionMatrix, V, weights: WeightScheme) -> np.ndarray:
    """``Xᵀ (W ⊙ X) V = alpha XᵀX V``."""
    V = _factor_checks(X, V, "V")
    return np.asfortranarray(weights.alpha * _gram_apply(X, V))


def rhs_factor_v(X: BinaryInteractionMatrix, U, weights: WeightScheme) -> np.ndarray:
    """``(Wᵀ ⊙ Xᵀ) X U = alpha XᵀX U``."""
    U = _factor_checks(X, U, "U")
    return np.asfortranarray(weights.alpha * _gram_apply(X, U))


# --------------------------------------------------------------------------
# preconditioners: inverses of the alpha = 1 Gram (or a Kronecker surrogate)


class IdentityPreconditioner:
    def __init__(self, shape):
        self.shape_of_unknown = tuple(shape)

    def apply(self, R):
        return np.asfortranarray(np.array(R, dtype=np.float64))

    def matvec(self, r):
        return np.array(r, dtype=np.float64)


def _cho(A: np.ndarray):
    try:
        return sla.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise PreconditionerError(str(exc)) from exc


class KroneckerPreconditioner:
    """``M⁻¹ = C⁻¹ ⊗ A⁻¹``, applied as ``A⁻¹ R C⁻¹``.

    ``A`` acts on the rows of the unknown and ``C`` on its columns; either may
    be ``None`` for the identity. Both are Cholesky-factored once.
    """

    def __init__(self, shape, left: np.ndarray | None = None,
                 right: np.ndarray | None = None):
        self.shape_of_unknown = tuple(shape)
        self._left = None if left is None else _cho(left)
        self._right = None if right is None else _cho(right)

    def apply(self, R) -> np.ndarray:
        Z = np.array(R, dtype=np.float64)
        if self._left is not None:
            Z = sla.cho_solve(self._left, Z, check_finite=False)
        if self._right is not None:
            Z = sla.cho_solve(self._right, Z.T, check_finite=False).T
        return np.asfortranarray(Z)

    def matvec(self, r):
        return vec(self.apply(unvec(r, *self.shape_of_unknown)))


class KroneckerEigenPreconditioner:
    """Exact inverse of ``C ⊗ A + shift I`` via eigenbases of ``A`` and ``C``.

    With ``A = R diag(a) Rᵀ`` and ``C = Q diag(c) Qᵀ`` the operator is
    diagonal in the basis ``Q ⊗ R`` with entries ``a_i c_j + shift``.
    """

    def __init__(self, shape, A_eig: tuple[np.ndarray, np.ndarray], C: np.ndarray,
                 shift: float):
        self.shape_of_unknown = tuple(shape)
        a, self._R = A_eig
        c, self._Q = np.linalg.eigh(C)
        c = np.clip(c, 0.0, None)
        self._D = np.outer(a, c) + shift
        if self._D.min() <= 1e-13 * max(self._D.max(), 1e-300):
            raise PreconditionerError("W=1 Gram is singular")

    def apply(self, R) -> np.ndarray:
        Z = self._R.T @ np.asarray(R, dtype=np.float64) @ self._Q
        Z /= self._D
        return np.asfortranarray(self._R @ Z @ self._Q.T)

    def matvec(self, r):
        return vec(self.apply(unvec(r, *self.shape_of_unknown)))


def make_preconditioner(op, cache: GramCache | None = None):
    """Inverse of the ``alpha = 1`` Gram of ``op``, never materialized.

    Raises :class:`PreconditionerError` when a dense block is not positive
    definite; callers may fall back to :class:`IdentityPreconditioner`.
    """
    shape = op.shape_of_unknown
    if isinstance(op, (FullRankGramOp, FactorGramOpU)):
        if cache is None or cache.X is not op.X:
            cache = GramCache(op.X)
    if isinstance(op, FullRankGramOp):
        n = op.X.n_items
        return KroneckerPreconditioner(shape, left=cache.gram + op.lam * np.eye(n))
    if isinstance(op, FactorGramOpU):
        n = op.X.n_items
        d = op.VtV.shape[0]
        if op.reg is RegKind.DROPOUT:
            # VᵀV ⊗ XᵀX + lam (VᵀV ⊗ I) = VᵀV ⊗ (XᵀX + lam I)
            return KroneckerPreconditioner(shape, left=cache.gram + op.lam * np.eye(n),
                                           right=op.VtV)
        if op.reg is RegKind.DATA_WEIGHT_DECAY:
            # VᵀV ⊗ XᵀX + lam (I ⊗ XᵀX) = (VᵀV + lam I) ⊗ XᵀX
            return KroneckerPreconditioner(shape, left=cache.gram,
                                           right=op.VtV + op.lam * np.eye(d))
        return KroneckerEigenPreconditioner(shape, cache.eig, op.VtV, op.lam)
    if isinstance(op, FactorGramOpV):
        d = op.XUtXU.shape[0]
        extra = op.UtU if op.reg is RegKind.DROPOUT else np.eye(d)
        return KroneckerPreconditioner(shape, right=op.XUtXU + op.lam * extra)
    if isinstance(op, UserGramOp):
        d = op.V.shape[1]
        return KroneckerPreconditioner(shape, right=op.V.T @ op.V + op.lam * np.eye(d))
    raise TypeError(f"no preconditioner for {type(op).__name__}")
