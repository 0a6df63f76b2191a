"""``wmf-lab`` command line: ingest, split, train, eval, sweep, verify, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import ExperimentConfig, parse_list
from .data import IngestError, ingest, subsample
from .evaluation import (
    EvalSplit,
    evaluate,
    make_split,
    preprocess,
    read_split_manifest,
    write_split_manifest,
)
from .models import ModelKind, load_model, save_model
from .sweep import SweepResult, emit_report, run_sweep, split_weighting
from .trainers import train

log = logging.getLogger("wmf_lab")

INTERACTIONS = "interactions.txt"
SPLIT = "split.txt"
MODEL = "model.bin"
SWEEP = "sweep.jsonl"
REPORT = "report.csv"
FORMAT_SUFFIX = {"csv": "csv", "jsonl": "jsonl", "table": "txt"}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--model", choices=[k.value for k in ModelKind])
    common.add_argument("--rank", type=int)
    common.add_argument("--alpha", help="comma-separated list")
    common.add_argument("--lambda", dest="lambdas", help="comma-separated list")
    common.add_argument("--threads", type=int,
                        help="BLAS threads (fallback: $WMF_LAB_THREADS)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--format", choices=list(FORMAT_SUFFIX))
    common.add_argument("--max-users", type=int)
    common.add_argument("--max-items", type=int)
    common.add_argument("--input", type=Path,
                        help="ratings/pairs file, split manifest, or sweep.jsonl")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wmf-lab", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("ingest", parents=[common], help="binarize and reindex a dataset")
    sub.add_parser("split", parents=[common], help="write a strong-generalization split")
    sub.add_parser("train", parents=[common], help="fit one model")
    p = sub.add_parser("eval", parents=[common], help="evaluate a saved model")
    p.add_argument("--model-file", type=Path, help="defaults to OUT/model.bin")
    p.add_argument("--role", choices=("val", "test"), default="val")
    sub.add_parser("sweep", parents=[common], help="grid search with boundary expansion")
    p = sub.add_parser("verify", parents=[common], help="oracle self-check suite")
    p.add_argument("--filter", action="append", default=[],
                   help="run only these blocks (repeatable or comma-separated)")
    sub.add_parser("report", parents=[common], help="render sweep results")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.model:
        cfg.model.kind = args.model
    if args.rank is not None:
        cfg.model.rank = args.rank
    if args.alpha:
        cfg.sweep.alphas = parse_list(args.alpha)
    if args.lambdas:
        cfg.sweep.lambdas = parse_list(args.lambdas)
    if args.out:
        cfg.run.out = str(args.out)
    if args.max_users is not None:
        cfg.data.max_users = args.max_users
    if args.max_items is not None:
        cfg.data.max_items = args.max_items
    if args.input and args.verb in ("ingest",):
        cfg.data.path = str(args.input)
    threads = args.threads
    if threads is None and os.environ.get("WMF_LAB_THREADS"):
        threads = int(os.environ["WMF_LAB_THREADS"])
    if threads is not None:
        cfg.run.threads = threads
    return cfg.validate()


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _is_manifest(path: Path) -> bool:
    with open(path, encoding="utf-8") as fh:
        return fh.readline().startswith("# n_items=")


def _load_interactions(cfg: ExperimentConfig, path: Path):
    raw = ingest(path, cfg.data.format, cfg.data.error_budget)
    fmt = cfg.data.format
    is_pairs = fmt == "pairs" or (fmt == "auto" and not _has_ml_header(path))
    raw = subsample(raw, cfg.data.max_users, cfg.data.max_items, cfg.run.seed)
    # pair files are already binary: every line is a positive
    threshold = 0.0 if is_pairs else cfg.split.rating_threshold
    return preprocess(raw, threshold, cfg.split.min_user_interactions).X


def _has_ml_header(path: Path) -> bool:
    with open(path, encoding="utf-8") as fh:
        return fh.readline().startswith("userId")


def _load_split(cfg: ExperimentConfig, path: Path | None) -> EvalSplit:
    path = path or Path(cfg.run.out) / SPLIT
    if not path.exists() and cfg.data.path:
        path = Path(cfg.data.path)
    if _is_manifest(path):
        return read_split_manifest(path)
    X = _load_interactions(cfg, path)
    return make_split(X, cfg.split_spec(X.n_users))


# ---------------------------------------------------------------- verbs


def cmd_ingest(cfg, args) -> int:
    if not cfg.data.path:
        raise SystemExit("ingest needs --input or [data] path")
    X = _load_interactions(cfg, Path(cfg.data.path))
    out = _out_dir(cfg) / INTERACTIONS
    rows, cols = X.coordinates()
    out.write_text("".join(f"{u} {i}\n" for u, i in zip(rows.tolist(), cols.tolist())))
    print(f"{X.n_users} users, {X.n_items} items, {X.nnz} interactions -> {out}")
    return 0


def cmd_split(cfg, args) -> int:
    path = args.input or Path(cfg.run.out) / INTERACTIONS
    X = _load_interactions(cfg, path) if not _is_manifest(path) else None
    if X is None:
        raise SystemExit(f"{path} is already a split manifest")
    spec = cfg.split_spec(X.n_users)
    split = make_split(X, spec)
    out = write_split_manifest(split, _out_dir(cfg) / SPLIT)
    print(f"train {len(split.train_users)}, val {len(split.val)}, test {len(split.test)} users "
          f"-> {out}")
    return 0


def _single(values, name) -> float:
    if len(values) != 1:
        raise SystemExit(f"train takes exactly one {name}, got {list(values)}")
    return values[0]


def cmd_train(cfg, args) -> int:
    split = _load_split(cfg, args.input)
    alpha = _single(cfg.sweep.alphas, "alpha")
    lam = _single(cfg.sweep.lambdas, "lambda")
    model = train(split.X_train, cfg.kind, cfg.model.rank, alpha, lam, cfg.train_config())
    model.n_users = split.X_train.n_users
    out = save_model(model, _out_dir(cfg) / MODEL)
    print(f"{cfg.kind.value} alpha={alpha:g} lambda={lam:g} -> {out}")
    return 0


def cmd_eval(cfg, args) -> int:
    split = _load_split(cfg, args.input)
    model = load_model(args.model_file or Path(cfg.run.out) / MODEL)
    report = evaluate(model, split, args.role)
    print(json.dumps(report.summary(), sort_keys=True))
    return 0


def cmd_sweep(cfg, args) -> int:
    split = _load_split(cfg, args.input)
    results: list[SweepResult] = []
    for label, alphas in split_weighting(cfg.sweep.alphas):
        res = run_sweep(split, cfg.kind, cfg.model.rank, alphas, cfg.sweep.lambdas,
                        cfg.train_config(), cfg.sweep.select_metric, cfg.expansion_rule(),
                        cfg.sweep.workers, label)
        res.settings["config"] = cfg.as_dict()
        log.info("%s sweep: selected alpha=%g lambda=%g", label, res.selected.alpha,
                 res.selected.lam)
        results.append(res)
    out = _out_dir(cfg)
    (out / SWEEP).write_text("".join(r.to_json() + "\n" for r in results))
    _write_reports(results, cfg, args.format or "csv", out)
    return 0


def _write_reports(results, cfg, fmt, out: Path):
    emit_report(results, "csv", out / REPORT)
    settings = cfg.as_dict()
    if fmt != "csv":
        text = emit_report(results, fmt, out / f"report.{FORMAT_SUFFIX[fmt]}", settings)
    else:
        text = (out / REPORT).read_text()
    cfg.write(out / "config.ini")
    sys.stdout.write(text)


def cmd_report(cfg, args) -> int:
    path = args.input or Path(cfg.run.out) / SWEEP
    results = [SweepResult.from_json(line) for line in Path(path).read_text().splitlines()
               if line.strip()]
    fmt = args.format or "table"
    settings = results[0].settings.get("config", cfg.as_dict()) if results else cfg.as_dict()
    text = emit_report(results, fmt, None, settings if fmt != "csv" else None)
    if args.out:
        dest = _out_dir(cfg) / (REPORT if fmt == "csv" else f"report.{FORMAT_SUFFIX[fmt]}")
        dest.write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_verify(cfg, args) -> int:
    from .verify import verify
    blocks = [b for f in args.filter for b in f.split(",") if b]
    return 0 if verify(blocks or None, cfg.run.seed) else 1


VERBS = {"ingest": cmd_ingest, "split": cmd_split, "train": cmd_train, "eval": cmd_eval,
         "sweep": cmd_sweep, "verify": cmd_verify, "report": cmd_report}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"wmf-lab: config error: {exc}", file=sys.stderr)
        return 2
    try:
        if cfg.run.threads > 0:
            with threadpool_limits(limits=cfg.run.threads):
                return VERBS[args.verb](cfg, args)
        return VERBS[args.verb](cfg, args)
    except (IngestError, FileNotFoundError, ValueError) as exc:
        print(f"wmf-lab {args.verb}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
