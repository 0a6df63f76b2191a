"""Fitting the five models: full-rank, three asymmetric variants, and WMF."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .models import FactorModel, FullRankModel, Model, ModelKind
from .operators import (
    FactorGramOpU,
    FactorGramOpV,
    FullRankGramOp,
    GramCache,
    IdentityPreconditioner,
    PreconditionerError,
    RegKind,
    WeightScheme,
    make_preconditioner,
    rhs_factor_u,
    rhs_factor_v,
    rhs_full_rank,
)
from .pcg import SolverConfig, pcg_solve, pcg_solve_columns
from .sparse import BinaryInteractionMatrix, sddmm, spmm, unvec, vec

log = logging.getLogger(__name__)


class SingularityWarning(RuntimeWarning):
    """A Gram system is (numerically) singular; results may not be unique."""


class ConvergenceWarning(RuntimeWarning):
    pass


class ObjectiveIncreaseWarning(RuntimeWarning):
    """An alternation raised the objective, usually from loose inner solves."""


@dataclass(frozen=True)
class TrainConfig:
    n_alternations: int = 20
    objective_rtol: float = 1e-4
    rel_tol: float = 1e-6
    max_iter: int | None = None
    init_seed: int = 0
    init_scale: float = 0.1
    precondition: bool = True
    block_size: int = 256
    fast_path: bool = True

    def __post_init__(self):
        if self.n_alternations < 1:
            raise ValueError("n_alternations must be >= 1")


def _preconditioner(op, cache, cfg: TrainConfig):
    if not cfg.precondition:
        return IdentityPreconditioner(op.shape_of_unknown)
    try:
        return make_preconditioner(op, cache)
    except PreconditionerError as exc:
        warnings.warn(f"{type(op).__name__}: W=1 Gram not factorizable ({exc}); "
                      "falling back to identity preconditioner", SingularityWarning,
                      stacklevel=3)
        return IdentityPreconditioner(op.shape_of_unknown)


# --------------------------------------------------------------------------
# full rank


def train_full_rank(X: BinaryInteractionMatrix, alpha: float, lam: float,
                    cfg: TrainConfig | None = None, target=None, B0=None) -> FullRankModel:
    """Minimize ``||sqrt(W) ⊙ (T - XB)||² + lam ||B||²`` with ``T = X`` by default.

    Columns of ``B`` are independent systems and are solved in blocks of
    ``cfg.block_size``. At ``alpha = 1`` (and ``T = X``) a single Cholesky
    solve replaces PCG unless ``cfg.fast_path`` is off.
    """
    cfg = cfg or TrainConfig()
    w = WeightScheme(alpha)
    cache = GramCache(X)
    n = X.n_items
    diagnostics = {"pcg_iterations": 0, "solver": "pcg", "unconverged_columns": []}

    if w.excess == 0 and target is None and cfg.fast_path:
        G = cache.gram
        try:
            factor = sla.cho_factor(G + lam * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            warnings.warn("XᵀX + lam I is singular; using least-squares solve",
                          SingularityWarning, stacklevel=2)
            B = np.linalg.lstsq(G + lam * np.eye(n), G, rcond=None)[0]
        else:
            B = sla.cho_solve(factor, G)
        diagnostics["solver"] = "cholesky"
        return FullRankModel(np.asfortranarray(B), alpha, lam, cfg.init_seed, X.n_users,
                             diagnostics)

    rhs = rhs_full_rank(X, w, cache, target=target)
    full_op = FullRankGramOp(X, w, lam)
    M = _preconditioner(full_op, cache, cfg)
    B = np.zeros((n, n), order="F") if B0 is None else np.array(B0, dtype=np.float64, order="F")
    max_iter = cfg.max_iter if cfg.max_iter is not None else n
    unconverged = []
    for start in range(0, n, cfg.block_size):
        cols = np.arange(start, min(start + cfg.block_size, n))
        op = FullRankGramOp(X, w, lam, columns=cols)
        b = rhs[:, cols]
        tol = np.maximum(cfg.rel_tol * np.linalg.norm(b, axis=0), np.finfo(float).tiny)
        X0 = B[:, cols] if B0 is not None else None
        Bc, reports = pcg_solve_columns(op.apply, M.apply, b, X0, tol, max_iter)
        B[:, cols] = Bc
        diagnostics["pcg_iterations"] = max(diagnostics["pcg_iterations"],
                                            max(r.iterations_used for r in reports))
        unconverged += [(int(c), r.final_residual_norm) for c, r in zip(cols, reports)
                        if not r.converged]
    if unconverged:
        diagnostics["unconverged_columns"] = unconverged
        worst = max(unconverged, key=lambda t: t[1])
        warnings.warn(f"{len(unconverged)} columns of B did not converge in {max_iter} "
                      f"iterations (worst: column {worst[0]}, residual {worst[1]:.3e})",
                      ConvergenceWarning, stacklevel=2)
    return FullRankModel(B, alpha, lam, cfg.init_seed, X.n_users, diagnostics)


# --------------------------------------------------------------------------
# asymmetric factor models


def _init_factor(rng: np.random.Generator, n: int, d: int, scale: float) -> np.ndarray:
    return np.asfortranarray(rng.normal(0.0, scale / np.sqrt(d), size=(n, d)))


def solve_u_step(X, V, w: WeightScheme, reg: RegKind, lam: float, U0=None,
                 cfg: TrainConfig | None = None, cache: GramCache | None = None,
                 rel_tol: float | None = None):
    """Closed-form ``U`` given ``V`` via PCG. Returns ``(U, SolveReport)``."""
    cfg = cfg or TrainConfig()
    op = FactorGramOpU(X, V, w, reg, lam)
    M = _preconditioner(op, cache, cfg)
    b = vec(rhs_factor_u(X, V, w))
    scfg = SolverConfig.relative(b, rel_tol or cfg.rel_tol, cfg.max_iter)
    x, report = pcg_solve(op, M, b, None if U0 is None else vec(U0), scfg)
    return np.asfortranarray(unvec(x, *op.shape_of_unknown)), report


def solve_v_step(X, U, w: WeightScheme, reg: RegKind, lam: float, V0=None,
                 cfg: TrainConfig | None = None, rel_tol: float | None = None):
    """Closed-form ``V`` given ``U`` via PCG. Returns ``(V, SolveReport)``."""
    cfg = cfg or TrainConfig()
    op = FactorGramOpV(X, U, w, reg, lam)
    M = _preconditioner(op, None, cfg)
    b = vec(rhs_factor_v(X, U, w))
    scfg = SolverConfig.relative(b, rel_tol or cfg.rel_tol, cfg.max_iter)
    x, report = pcg_solve(op, M, b, None if V0 is None else vec(V0), scfg)
    return np.asfortranarray(unvec(x, *op.shape_of_unknown)), report


def _alternate(step_u, step_v, objective, U, V, cfg: TrainConfig, diagnostics: dict):
    trace = [objective(U, V)]
    for t in range(cfg.n_alternations):
        U = step_u(U, V)
        V = step_v(U, V)
        f = objective(U, V)
        prev = trace[-1]
        trace.append(f)
        if f > prev + 1e-10 * abs(prev):
            warnings.warn(f"objective increased at alternation {t}: {prev:.12g} -> {f:.12g}",
                          ObjectiveIncreaseWarning, stacklevel=3)
        log.debug("alternation %d objective %.12g", t, f)
        if prev - f < cfg.objective_rtol * abs(prev):
            break
    diagnostics["objective_trace"] = trace
    diagnostics["alternations"] = len(trace) - 1
    return U, V


def train_awmf(X: BinaryInteractionMatrix, kind: ModelKind, d: int, alpha: float,
               lam: float, cfg: TrainConfig | None = None, V0=None) -> FactorModel:
    """Alternating closed-form minimization for the three asymmetric models.

    ``V`` starts Gaussian with standard deviation ``init_scale / sqrt(d)``
    (or ``V0``); ``U`` is solved first, then ``V``, each warm-started.
    """
    cfg = cfg or TrainConfig()
    if not kind.asymmetric:
        raise ValueError(f"{kind.value} is not an asymmetric factor model")
    if not 1 <= d <= X.n_items:
        raise ValueError(f"rank must be in [1, {X.n_items}], got {d}")
    if lam == 0:
        warnings.warn("lambda = 0: Gram systems may be singular", SingularityWarning,
                      stacklevel=2)
    w = WeightScheme(alpha)
    reg = kind.reg
    cache = GramCache(X)
    rng = np.random.default_rng(cfg.init_seed)
    V = _init_factor(rng, X.n_items, d, cfg.init_scale) if V0 is None else np.asfortranarray(V0, dtype=np.float64)
    U = np.zeros_like(V)
    diagnostics = {"pcg_iterations_u": [], "pcg_iterations_v": []}

    def step_u(U, V):
        Un, rep = solve_u_step(X, V, w, reg, lam, U, cfg, cache)
        diagnostics["pcg_iterations_u"].append(rep.iterations_used)
        return Un

    def step_v(U, V):
        Vn, rep = solve_v_step(X, U, w, reg, lam, V, cfg)
        diagnostics["pcg_iterations_v"].append(rep.iterations_used)
        return Vn

    probe = FactorModel(kind, U, V, alpha, lam)

    def objective(U, V):
        probe.U, probe.V = U, V
        return objective_value(X, probe)

    U, V = _alternate(step_u, step_v, objective, U, V, cfg, diagnostics)
    return FactorModel(kind, U, V, alpha, lam, cfg.init_seed, X.n_users, diagnostics)


# --------------------------------------------------------------------------
# WMF: per-row weighted ridge regressions


def als_rows(Xcsr, F: np.ndarray, alpha: float, lam: float,
             max_chunk_entries: int = 1 << 22) -> np.ndarray:
    """Solve every row's weighted ridge regression against fixed factors ``F``.

    Row ``u`` with item set ``S`` gets
    ``(FᵀF + (alpha-1) F_Sᵀ F_S + lam I) x = alpha F_Sᵀ 1``.
    """
    n_rows, n_cols = Xcsr.shape
    d = F.shape[1]
    base = F.T @ F + lam * np.eye(d)
    FF = np.einsum("id,ie->ide", F, F).reshape(n_cols, d * d)
    out = np.empty((n_rows, d))
    chunk = max(1, max_chunk_entries // (d * d))
    excess = alpha - 1.0
    for start in range(0, n_rows, chunk):
        Xc = Xcsr[start:start + chunk]
        G = np.broadcast_to(base, (Xc.shape[0], d, d)).copy()
        if excess:
            G += excess * np.asarray(Xc @ FF).reshape(-1, d, d)
        rhs = alpha * np.asarray(Xc @ F)
        try:
            out[start:start + chunk] = np.linalg.solve(G, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            bad = [start + j for j in range(G.shape[0])
                   if np.linalg.matrix_rank(G[j]) < d]
            raise np.linalg.LinAlgError(f"singular {d}x{d} system for rows {bad[:10]}"
                                        f"{' ...' if len(bad) > 10 else ''}") from None
    return np.asfortranarray(out)


def train_wmf(X: BinaryInteractionMatrix, d: int, alpha: float, lam: float,
              cfg: TrainConfig | None = None, V0=None) -> FactorModel:
    """Classic weighted ALS with free user factors."""
    cfg = cfg or TrainConfig()
    if not 1 <= d <= X.n_items:
        raise ValueError(f"rank must be in [1, {X.n_items}], got {d}")
    rng = np.random.default_rng(cfg.init_seed)
    V = _init_factor(rng, X.n_items, d, cfg.init_scale) if V0 is None else np.asfortranarray(V0, dtype=np.float64)
    U = np.zeros((X.n_users, d), order="F")
    Xt = X.csc.T.tocsr()
    diagnostics: dict = {}
    probe = FactorModel(ModelKind.WMF, U, V, alpha, lam)

    def objective(U, V):
        probe.U, probe.V = U, V
        return objective_value(X, probe)

    U, V = _alternate(lambda U, V: als_rows(X.csr, V, alpha, lam),
                      lambda U, V: als_rows(Xt, U, alpha, lam),
                      objective, U, V, cfg, diagnostics)
    return FactorModel(ModelKind.WMF, U, V, alpha, lam, cfg.init_seed, X.n_users, diagnostics)


def train(X: BinaryInteractionMatrix, kind: ModelKind, d: int, alpha: float, lam: float,
          cfg: TrainConfig | None = None) -> Model:
    if kind is ModelKind.FULL_RANK:
        return train_full_rank(X, alpha, lam, cfg)
    if kind is ModelKind.WMF:
        return train_wmf(X, d, alpha, lam, cfg)
    return train_awmf(X, kind, d, alpha, lam, cfg)


# --------------------------------------------------------------------------
# objective


def _weighted_loss(nnz: int, sq_norm_pred: float, on_pattern: np.ndarray, alpha: float) -> float:
    # ||sqrt(W) ⊙ (X - P)||² = ||P||² - 2<X,P> + ||X||² + (alpha-1) Σ_nnz (1 - P)²
    return (sq_norm_pred - 2.0 * float(on_pattern.sum()) + nnz
            + (alpha - 1.0) * float(np.sum((1.0 - on_pattern) ** 2)))


def objective_value(X: BinaryInteractionMatrix, model: Model, alpha: float | None = None,
                    lam: float | None = None, chunk_users: int = 4096) -> float:
    """Weighted squared loss plus the model's regularizer, without dense predictions."""
    alpha = model.alpha if alpha is None else alpha
    lam = model.lam if lam is None else lam
    if isinstance(model, FullRankModel):
        B = model.B
        sq, on = 0.0, []
        for start in range(0, X.n_users, chunk_users):
            Xc = X.csr[start:start + chunk_users]
            P = np.asarray(Xc @ B)
            sq += float(np.sum(P * P))
            rows = np.repeat(np.arange(Xc.shape[0]), np.diff(Xc.indptr))
            on.append(P[rows, Xc.indices])
        on = np.concatenate(on) if on else np.zeros(0)
        return _weighted_loss(X.nnz, sq, on, alpha) + lam * float(np.sum(B * B))

    U, V = model.U, model.V
    A = U if model.kind is ModelKind.WMF else spmm(X, U)
    VtV = V.T @ V
    sq = float(np.sum((A.T @ A) * VtV))
    on = sddmm(X, A, V).values
    loss = _weighted_loss(X.nnz, sq, on, alpha)
    if model.kind is ModelKind.AWMF_DROPOUT:
        reg = float(np.sum((U.T @ U) * VtV))
    elif model.kind is ModelKind.AWMF_DATA_WEIGHT_DECAY:
        reg = float(np.sum(A * A) + np.sum(V * V))
    else:
        reg = float(np.sum(U * U) + np.sum(V * V))
    return loss + lam * reg
