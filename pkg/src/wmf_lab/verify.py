"""Self-check suite: matrix-free code against the dense oracle on tiny instances."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import oracle
from .evaluation import ndcg_at_k, recall_at_k
from .models import FullRankModel, ModelKind
from .operators import (
    FactorGramOpU,
    FactorGramOpV,
    FullRankGramOp,
    UserGramOp,
    WeightScheme,
    make_preconditioner,
    rhs_factor_u,
    rhs_factor_v,
)
from .pcg import SolverConfig, pcg_solve
from .sparse import BinaryInteractionMatrix, unvec, vec
from .trainers import TrainConfig, als_rows, objective_value, train, train_full_rank

BLOCKS = ("identities", "operators", "closed-forms", "stationarity", "metrics")
ASYMMETRIC = (ModelKind.AWMF_WEIGHT_DECAY, ModelKind.AWMF_DROPOUT,
              ModelKind.AWMF_DATA_WEIGHT_DECAY)


@dataclass
class CheckResult:
    block: str
    name: str
    error: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return math.isfinite(self.error) and self.error <= self.tolerance


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_instance(rng: np.random.Generator, n_users: int, n_items: int,
                    density: float = 0.4) -> np.ndarray:
    """A binary matrix with full column rank and modest conditioning."""
    for _ in range(1000):
        X = (rng.random((n_users, n_items)) < density).astype(np.float64)
        if np.linalg.matrix_rank(X) == n_items and np.linalg.cond(X) < 1e3:
            return X
    raise RuntimeError("could not draw a well-conditioned instance")


# ---------------------------------------------------------------- blocks


def check_identities(rng, trials: int = 20) -> list[CheckResult]:
    e1 = e2 = 0.0
    for _ in range(trials):
        m, n, k, d = (int(v) for v in rng.integers(2, 7, size=4))
        A, B, C = rng.normal(size=(m, n)), rng.normal(size=(n, d)), rng.normal(size=(k, d))
        W = rng.uniform(0.1, 5.0, size=(m, k))
        e1 = max(e1, rel_err(*oracle.kron_identity_1(A, B, C, W)))
        Ck = rng.normal(size=(k, d))
        e2 = max(e2, rel_err(*oracle.kron_identity_2(A, B, Ck, W)))
    return [CheckResult("identities", "kron-identity-1", e1, 1e-10),
            CheckResult("identities", "kron-identity-2", e2, 1e-10)]


def _operator_cases(rng):
    """Yield (name, operator, dense Gram) triples on fresh random instances."""
    for alpha, lam in ((1.0, 0.0), (5.0, 0.5), (21.0, 10.0)):
        Xd = random_instance(rng, 15, 6)
        X = BinaryInteractionMatrix.from_dense(Xd)
        w = WeightScheme(alpha)
        d = 3
        V = rng.normal(size=(6, d))
        U = rng.normal(size=(6, d))
        tag = f"a={alpha:g},l={lam:g}"
        p = oracle.DenseProblem.from_alpha(Xd, alpha, lam, ModelKind.FULL_RANK)
        yield f"full-rank[{tag}]", FullRankGramOp(X, w, lam), oracle.dense_gram_assemble(p, "B")
        for kind in ASYMMETRIC:
            p = oracle.DenseProblem.from_alpha(Xd, alpha, lam, kind)
            yield (f"{kind.value}/U[{tag}]", FactorGramOpU(X, V, w, kind.reg, lam),
                   oracle.dense_gram_assemble(p, "U", V))
            yield (f"{kind.value}/V[{tag}]", FactorGramOpV(X, U, w, kind.reg, lam),
                   oracle.dense_gram_assemble(p, "V", U))
        p = oracle.DenseProblem.from_alpha(Xd, alpha, lam, ModelKind.WMF)
        Uf = rng.normal(size=(15, d))
        yield f"wmf/U[{tag}]", UserGramOp(X, V, w, lam), oracle.dense_gram_assemble(p, "U", V)
        yield (f"wmf/V[{tag}]", UserGramOp(X.transpose(), Uf, w, lam),
               oracle.dense_gram_assemble(p, "V", Uf))


def check_operators(rng) -> list[CheckResult]:
    out = []
    for name, op, H in _operator_cases(rng):
        P = rng.normal(size=op.shape_of_unknown)
        try:
            err = rel_err(vec(op.apply(P)), H @ vec(P))
        except Exception as exc:  # noqa: BLE001 - reported as a failure
            out.append(CheckResult("operators", name, math.inf, 1e-10, repr(exc)))
            continue
        out.append(CheckResult("operators", name, err, 1e-10))
    return out


def _pcg(op, b, tol=1e-13):
    M = make_preconditioner(op)
    x, rep = pcg_solve(op, M, vec(b), None, SolverConfig.relative(vec(b), tol, 10 * op.dim))
    return unvec(x, *op.shape_of_unknown)


def check_closed_forms(rng) -> list[CheckResult]:
    out = []
    for alpha, lam in ((1.0, 0.5), (5.0, 0.0), (21.0, 10.0)):
        tag = f"a={alpha:g},l={lam:g}"
        Xd = random_instance(rng, 20, 6)
        X = BinaryInteractionMatrix.from_dense(Xd)
        w = WeightScheme(alpha)
        V = rng.normal(size=(6, 3))
        U = rng.normal(size=(6, 3))

        def run(name, fn, ref):
            try:
                err = rel_err(fn(), ref())
            except Exception as exc:  # noqa: BLE001
                out.append(CheckResult("closed-forms", name, math.inf, 1e-7, repr(exc)))
                return
            out.append(CheckResult("closed-forms", name, err, 1e-7))

        p = oracle.DenseProblem.from_alpha(Xd, alpha, lam, ModelKind.FULL_RANK)
        run(f"full-rank[{tag}]",
            lambda: train(X, ModelKind.FULL_RANK, 0, alpha, lam,
                          TrainConfig(rel_tol=1e-13)).B,
            lambda: oracle.dense_closed_form(p, "B"))
        for kind in ASYMMETRIC:
            p = oracle.DenseProblem.from_alpha(Xd, alpha, lam, kind)
            run(f"{kind.value}/U[{tag}]",
                lambda: _pcg(FactorGramOpU(X, V, w, kind.reg, lam), rhs_factor_u(X, V, w)),
                lambda: oracle.dense_closed_form(p, "U", V))
            run(f"{kind.value}/V[{tag}]",
                lambda: _pcg(FactorGramOpV(X, U, w, kind.reg, lam), rhs_factor_v(X, U, w)),
                lambda: oracle.dense_closed_form(p, "V", U))
        if lam > 0:
            p = oracle.DenseProblem.from_alpha(Xd, alpha, lam, ModelKind.WMF)
            run(f"wmf/U[{tag}]", lambda: als_rows(X.csr, V, alpha, lam),
                lambda: oracle.dense_closed_form(p, "U", V))
    # generalized right-hand side: an arbitrary target T in place of X
    Xd = random_instance(rng, 20, 6)
    X = BinaryInteractionMatrix.from_dense(Xd)
    T = rng.normal(size=Xd.shape)
    W = 4.0 * Xd + 1.0
    H = oracle.dense_gram_assemble(oracle.DenseProblem(Xd, W, 0.7, ModelKind.FULL_RANK), "B")
    ref = unvec(np.linalg.solve(H, vec(Xd.T @ (W * T))), 6, 6)
    got = train_full_rank(X, 5.0, 0.7, TrainConfig(rel_tol=1e-13), target=T).B
    out.append(CheckResult("closed-forms", "full-rank/general-target", rel_err(got, ref), 1e-7))
    return out


def stationarity_error(problem: oracle.DenseProblem, point) -> float:
    """Largest finite-difference gradient entry, relative to ``max(1, objective)``."""
    f = oracle.dense_objective(problem, point)
    g = oracle.finite_difference_gradient(problem, point)
    gmax = float(np.max(np.abs(g))) if problem.kind is ModelKind.FULL_RANK else \
        max(float(np.max(np.abs(g[0]))), float(np.max(np.abs(g[1]))))
    return gmax / max(1.0, abs(f))


STATIONARITY_CFG = TrainConfig(n_alternations=3000, objective_rtol=0.0, rel_tol=1e-12)


def check_stationarity(rng) -> list[CheckResult]:
    out = []
    Xd = random_instance(rng, 20, 6, 0.45)
    X = BinaryInteractionMatrix.from_dense(Xd)
    for kind in ModelKind:
        alpha, lam = 3.0, 2.0
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = train(X, kind, 2, alpha, lam, STATIONARITY_CFG)
            point = model.B if isinstance(model, FullRankModel) else (model.U, model.V)
            problem = oracle.DenseProblem.from_alpha(Xd, alpha, lam, kind)
            err = stationarity_error(problem, point)
            agree = rel_err(objective_value(X, model), oracle.dense_objective(problem, point))
            out.append(CheckResult("stationarity", f"{kind.value}/gradient", err, 1e-5))
            out.append(CheckResult("stationarity", f"{kind.value}/objective", agree, 1e-10))
        except Exception as exc:  # noqa: BLE001
            out.append(CheckResult("stationarity", kind.value, math.inf, 1e-5, repr(exc)))
    return out


def check_metrics(rng) -> list[CheckResult]:
    ranked = list(range(10))
    cases = [
        ("recall/perfect", recall_at_k(ranked, [0, 1], 5), 1.0),
        ("recall/miss", recall_at_k(ranked, [8, 9], 5), 0.0),
        ("recall/half", recall_at_k(ranked, [0, 5], 5), 0.5),
        ("ndcg/perfect", ndcg_at_k(ranked, [0, 1, 2], 100), 1.0),
        ("ndcg/hand", ndcg_at_k(ranked, [0, 2], 100), 1.5 / (1 + 1 / math.log2(3))),
        ("ndcg/miss", ndcg_at_k(ranked[:3], [7], 3), 0.0),
    ]
    out = [CheckResult("metrics", name, abs(got - want), 1e-12) for name, got, want in cases]
    # an arbitrary ranking scored against the textbook formula
    order = rng.permutation(50)
    held = rng.choice(50, size=7, replace=False)
    dcg = sum(1 / math.log2(r + 2) for r, i in enumerate(order[:20]) if i in set(held))
    idcg = sum(1 / math.log2(r + 2) for r in range(7))
    out.append(CheckResult("metrics", "ndcg/random", abs(ndcg_at_k(order, held, 20) - dcg / idcg), 1e-12))
    return out


CHECKS: dict[str, Callable[[np.random.Generator], list[CheckResult]]] = {
    "identities": check_identities,
    "operators": check_operators,
    "closed-forms": check_closed_forms,
    "stationarity": check_stationarity,
    "metrics": check_metrics,
}


def run_checks(blocks: Iterable[str] | None = None, seed: int = 0) -> list[CheckResult]:
    blocks = list(BLOCKS if not blocks else blocks)
    unknown = [b for b in blocks if b not in CHECKS]
    if unknown:
        raise ValueError(f"unknown verify block(s) {unknown}; choose from {list(BLOCKS)}")
    results = []
    for name in blocks:
        results.extend(CHECKS[name](np.random.default_rng([seed, BLOCKS.index(name)])))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max([len(r.name) for r in results] + [5])
    lines = [f"{'block':<13} {'check':<{width}} {'max rel err':>12} {'tol':>8}  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        detail = f"  {r.detail}" if r.detail else ""
        lines.append(f"{r.block:<13} {r.name:<{width}} {r.error:12.3e} {r.tolerance:8.0e}  {status}{detail}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)


def verify(blocks: Iterable[str] | None = None, seed: int = 0, stream=None) -> bool:
    """Run the suite, print the table, and return whether everything passed."""
    import sys
    results = run_checks(blocks, seed)
    print(format_table(results), file=stream or sys.stdout)
    return all(r.passed for r in results)
