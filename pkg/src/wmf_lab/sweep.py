"""Hyperparameter grid sweeps with boundary expansion, and report emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .evaluation import EvalSplit, evaluate
from .models import ModelKind
from .trainers import TrainConfig, train

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (1e-4, 1e-2, 1.0, 100.0, 1e4)
DEFAULT_ALPHAS = (1.0, 2.0, 5.0, 10.0, 20.0)

CSV_HEADER = ("model", "rank", "alpha", "lambda", "recall_at_20", "recall_at_50",
              "ndcg_at_100", "se_recall_20", "se_recall_50", "se_ndcg_100")


@dataclass(frozen=True)
class ExpansionRule:
    lambda_factor: float = 100.0
    alpha_factor: float = 2.0
    lambda_max: float = 1e8
    lambda_min: float = 1e-12
    alpha_max: float = 200.0
    enabled: bool = True


@dataclass
class SweepCell:
    alpha: float
    lam: float
    val: dict | None = None
    runtime_s: float = 0.0
    pcg_iterations: int = 0
    error: str | None = None
    selected: bool = False


@dataclass
class SweepResult:
    kind: ModelKind
    rank: int
    label: str
    select_metric: str
    cells: list[SweepCell]
    test: dict | None = None
    settings: dict = field(default_factory=dict)

    @property
    def selected(self) -> SweepCell:
        chosen = [c for c in self.cells if c.selected]
        if len(chosen) != 1:
            raise ValueError("sweep has no unique selected cell")
        return chosen[0]

    def to_json(self) -> str:
        d = asdict(self)
        d["kind"] = self.kind.value
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SweepResult":
        d = json.loads(line)
        d["kind"] = ModelKind(d["kind"])
        d["cells"] = [SweepCell(**c) for c in d["cells"]]
        return cls(**d)


def _score(cell: SweepCell, metric: str) -> float:
    if cell.val is None:
        return -math.inf
    v = cell.val[metric]
    return v if math.isfinite(v) else -math.inf


def _best(cells: Sequence[SweepCell], metric: str) -> SweepCell:
    # ties go to the smallest (alpha, lambda)
    ordered = sorted(cells, key=lambda c: (c.alpha, c.lam))
    return max(ordered, key=lambda c: _score(c, metric))


def run_sweep(split: EvalSplit, kind: ModelKind, rank: int, alphas: Sequence[float],
              lambdas: Sequence[float], train_cfg: TrainConfig | None = None,
              select_metric: str = "ndcg_at_100", rule: ExpansionRule = ExpansionRule(),
              workers: int = 1, label: str = "", keep_model: bool = False) -> SweepResult:
    """Train and validate one model per (alpha, lambda) cell, expanding at the boundary.

    An axis with at least two values is extended (lambda by ``/ x100`` or
    ``x100``, alpha by ``x2``) while the best cell sits on its extreme value
    (for alpha only the largest, and only if it exceeds 1), up to the caps.
    The winning cell is then evaluated once on the test users.
    """
    train_cfg = train_cfg or TrainConfig()
    alphas = sorted(set(float(a) for a in alphas))
    lambdas = sorted(set(float(lam) for lam in lambdas))
    if not alphas or not lambdas:
        raise ValueError("grids must be non-empty")
    cells: dict[tuple[float, float], SweepCell] = {}
    models: dict[tuple[float, float], object] = {}
    best_model = {}

    def fit(key):
        alpha, lam = key
        cell = SweepCell(alpha, lam)
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = train(split.X_train, kind, rank, alpha, lam, train_cfg)
            cell.val = evaluate(model, split, "val").summary()
            diag = model.diagnostics
            cell.pcg_iterations = int(sum(diag.get("pcg_iterations_u", []))
                                      + sum(diag.get("pcg_iterations_v", []))
                                      + diag.get("pcg_iterations", 0))
        except Exception as exc:  # recorded per cell; the sweep carries on
            log.warning("cell alpha=%g lambda=%g failed: %s", alpha, lam, exc)
            cell.error = f"{type(exc).__name__}: {exc}"
            model = None
        cell.runtime_s = time.perf_counter() - t0
        return key, cell, model

    def run(keys):
        keys = [k for k in keys if k not in cells]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(fit, keys))
        else:
            results = [fit(k) for k in keys]
        for key, cell, model in results:
            cells[key] = cell
            models[key] = model
        # only the current best model is kept alive
        best = _best(list(cells.values()), select_metric)
        bkey = (best.alpha, best.lam)
        kept = {**best_model, **models}
        best_model.clear()
        best_model[bkey] = kept.get(bkey)
        models.clear()
        return best

    best = run([(a, lam) for a in alphas for lam in lambdas])
    while rule.enabled:
        grown = False
        if len(lambdas) > 1 and best.lam == lambdas[0]:
            new = lambdas[0] / rule.lambda_factor
            if new >= rule.lambda_min:
                lambdas.insert(0, new)
                grown = True
        elif len(lambdas) > 1 and best.lam == lambdas[-1]:
            new = lambdas[-1] * rule.lambda_factor
            if new <= rule.lambda_max:
                lambdas.append(new)
                grown = True
        if len(alphas) > 1 and best.alpha == alphas[-1] and best.alpha > 1:
            new = alphas[-1] * rule.alpha_factor
            if new <= rule.alpha_max:
                alphas.append(new)
                grown = True
        if not grown:
            break
        best = run([(a, lam) for a in alphas for lam in lambdas])

    best.selected = True
    model = best_model.get((best.alpha, best.lam))
    test = None
    if model is not None and split.test:
        test = evaluate(model, split, "test").summary()
    ordered = [cells[k] for k in sorted(cells)]
    result = SweepResult(kind, rank if kind is not ModelKind.FULL_RANK else 0, label,
                         select_metric, ordered, test,
                         {"train": asdict(train_cfg), "expansion": asdict(rule)})
    if keep_model:
        result.model = model  # type: ignore[attr-defined]
    return result


def split_weighting(alphas: Sequence[float]) -> list[tuple[str, list[float]]]:
    """Separate a grid into weighted (alpha > 1) and unweighted (alpha = 1) sweeps."""
    weighted = [a for a in alphas if a > 1]
    out = []
    if weighted:
        out.append(("weighted", weighted))
    if any(a == 1 for a in alphas):
        out.append(("unweighted", [1.0]))
    return out


# --------------------------------------------------------------------------
# reports


def report_rows(results: Sequence[SweepResult]) -> list[dict]:
    rows = []
    for res in results:
        cell = res.selected
        metrics = res.test or {}
        row = {"model": res.kind.value, "rank": res.rank, "alpha": cell.alpha,
               "lambda": cell.lam}
        for key in CSV_HEADER[4:]:
            row[key] = metrics.get(key, float("nan"))
        rows.append(row)
    return rows


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def emit_report(results: Sequence[SweepResult], fmt: str = "csv", path=None,
                settings: dict | None = None) -> str:
    """Render one row per sweep (its selected cell, with test metrics).

    ``settings`` (a flat or nested mapping) is included in the json-lines and
    table outputs so they are self-describing; csv keeps its fixed header.
    """
    rows = report_rows(results)
    buf = io.StringIO()
    if fmt == "csv":
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in CSV_HEADER])
    elif fmt in ("jsonl", "json-lines"):
        if settings is not None:
            buf.write(json.dumps({"settings": settings}, sort_keys=True) + "\n")
        for row, res in zip(rows, results):
            buf.write(json.dumps({**row, "label": res.label,
                                  "select_metric": res.select_metric}, sort_keys=True) + "\n")
    elif fmt == "table":
        cols = ("model", "rank", "alpha", "lambda", "recall_at_20", "recall_at_50", "ndcg_at_100")
        cells = [[str(row[c]) if c in ("model", "rank") else f"{row[c]:.4g}" if c in ("alpha", "lambda")
                  else f"{row[c]:.3f}" for c in cols] for row in rows]
        widths = [max(len(c), *(len(r[i]) for r in cells)) if cells else len(c)
                  for i, c in enumerate(cols)]
        buf.write("  ".join(c.ljust(w) for c, w in zip(cols, widths)) + "\n")
        for r in cells:
            buf.write("  ".join(v.ljust(w) for v, w in zip(r, widths)) + "\n")
        if settings is not None:
            buf.write("\n")
            for k, v in _flatten(settings):
                buf.write(f"# {k} = {v}\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _flatten(d: dict, prefix: str = ""):
    for k in sorted(d):
        v = d[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def read_report_csv(path_or_text) -> list[dict]:
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) else path_or_text
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {"model": rec["model"], "rank": int(rec["rank"])}
        for key in CSV_HEADER[2:]:
            row[key] = float(rec[key])
        rows.append(row)
    return rows
