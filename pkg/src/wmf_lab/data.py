"""Reading rating/pair files and desk-scale subsampling."""

from __future__ import annotations

import logging
import random
from pathlib import Path
from typing import Iterable

import numpy as np

from .sparse import BinaryInteractionMatrix

log = logging.getLogger(__name__)

ML_HEADER = ("userId", "movieId", "rating", "timestamp")


class IngestError(ValueError):
    def __init__(self, path, problems: list[tuple[int, str]]):
        shown = "; ".join(f"line {n}: {msg}" for n, msg in problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        super().__init__(f"{path}: {len(problems)} malformed line(s): {shown}{more}")
        self.problems = problems


def _detect(first_line: str) -> str:
    head = [t.strip() for t in first_line.replace(",", " ").split()]
    return "ml" if head[:2] == list(ML_HEADER[:2]) else "pairs"


def ingest(path, fmt: str = "auto", error_budget: int = 0) -> list[tuple[int, int, float]]:
    """Parse a MovieLens ratings CSV or a headerless ``user item`` pair file.

    Pair lines may be separated by whitespace or a comma; their rating is 1.
    Malformed lines are collected with their line numbers and the call fails
    once more than ``error_budget`` of them are seen.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if fmt == "auto":
        fmt = _detect(lines[0]) if lines else "pairs"
    if fmt not in ("ml", "pairs"):
        raise ValueError(f"unknown format {fmt!r}")
    out: list[tuple[int, int, float]] = []
    problems: list[tuple[int, str]] = []
    start = 0
    if fmt == "ml":
        if not lines or [t.strip() for t in lines[0].split(",")][:3] != list(ML_HEADER[:3]):
            raise IngestError(path, [(1, f"expected header {','.join(ML_HEADER)}")])
        start = 1
    for lineno, line in enumerate(lines[start:], start + 1):
        if not line.strip():
            continue
        try:
            if fmt == "ml":
                parts = line.split(",")
                if len(parts) not in (3, 4):
                    raise ValueError(f"expected 4 fields, got {len(parts)}")
                out.append((int(parts[0]), int(parts[1]), float(parts[2])))
            else:
                parts = line.replace(",", " ").split()
                if len(parts) != 2:
                    raise ValueError(f"expected 2 fields, got {len(parts)}")
                out.append((int(parts[0]), int(parts[1]), 1.0))
        except ValueError as exc:
            problems.append((lineno, str(exc)))
            if len(problems) > error_budget:
                raise IngestError(path, problems) from None
    if problems:
        log.warning("%s: skipped %d malformed line(s)", path, len(problems))
    return out


def export_pairs(X: BinaryInteractionMatrix, path) -> Path:
    """Write ``X`` as a headerless ``user item`` pair file."""
    path = Path(path)
    rows, cols = X.coordinates()
    path.write_text("".join(f"{u} {i}\n" for u, i in zip(rows.tolist(), cols.tolist())))
    return path


def read_pairs_matrix(path, n_users: int | None = None, n_items: int | None = None):
    raw = ingest(path, "pairs")
    users = [u for u, _, _ in raw]
    items = [i for _, i, _ in raw]
    return BinaryInteractionMatrix.from_coordinates(users, items, n_users, n_items)


def reservoir_sample(stream: Iterable, k: int, rng: random.Random) -> list:
    """Uniform sample of ``k`` elements from a stream (Algorithm R)."""
    sample = []
    for n, x in enumerate(stream):
        if n < k:
            sample.append(x)
        else:
            j = rng.randrange(n + 1)
            if j < k:
                sample[j] = x
    return sample


def subsample(raw: list[tuple], max_users: int = 0, max_items: int = 0,
              seed: int = 0) -> list[tuple]:
    """Keep a seeded random subset of items, then of users (0 means no limit)."""
    rng = random.Random(seed)
    if max_items:
        items = sorted({t[1] for t in raw})
        if len(items) > max_items:
            keep = set(reservoir_sample(items, max_items, rng))
            raw = [t for t in raw if t[1] in keep]
    if max_users:
        users = sorted({t[0] for t in raw})
        if len(users) > max_users:
            keep = set(reservoir_sample(users, max_users, rng))
            raw = [t for t in raw if t[0] in keep]
    return raw


def planted_interactions(n_users: int, n_clusters: int = 4, items_per_cluster: int = 15,
                         mean_items: float = 8.0, affinity: float = 2.0,
                         seed: int = 0) -> np.ndarray:
    """Dense 0/1 matrix with planted cluster structure and item popularity.

    Each user belongs to one of ``n_clusters`` taste groups and draws
    ``max(5, Poisson(mean_items))`` distinct items with probabilities
    proportional to ``exp(affinity * [same cluster] + popularity)``, where
    item popularity is standard normal. Observed positives are therefore a
    biased sample, which is the regime where upweighting them helps small
    models.
    """
    rng = np.random.default_rng(seed)
    n_items = n_clusters * items_per_cluster
    item_cluster = np.repeat(np.arange(n_clusters), items_per_cluster)
    user_cluster = rng.choice(n_clusters, size=n_users)
    logits = (np.where(item_cluster[None, :] == user_cluster[:, None], affinity, 0.0)
              + rng.normal(size=n_items)[None, :])
    X = np.zeros((n_users, n_items))
    for u in range(n_users):
        p = np.exp(logits[u] - logits[u].max())
        p /= p.sum()
        n = min(max(5, rng.poisson(mean_items)), n_items - 1)
        X[u, rng.choice(n_items, size=n, replace=False, p=p)] = 1.0
    return X
