"""Strong-generalization evaluation: preprocessing, splits, scoring, metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .models import FullRankModel, Model, ModelKind
from .sparse import BinaryInteractionMatrix
from .trainers import als_rows


@dataclass(frozen=True)
class SplitSpec:
    n_heldout_users_val: int
    n_heldout_users_test: int
    fold_in_fraction: float = 0.8
    rating_threshold: float = 3.0
    min_user_interactions: int = 5
    seed: int = 98765

    def __post_init__(self):
        if not 0.0 < self.fold_in_fraction < 1.0:
            raise ValueError("fold_in_fraction must be in (0, 1)")
        if self.n_heldout_users_val < 0 or self.n_heldout_users_test < 0:
            raise ValueError("held-out user counts must be non-negative")


@dataclass
class Preprocessed:
    X: BinaryInteractionMatrix
    user_ids: list
    item_ids: list


def preprocess(raw: Iterable[tuple], rating_threshold: float = 3.0,
               min_user_interactions: int = 5) -> Preprocessed:
    """Binarize ``(user, item, rating)`` tuples and reindex densely.

    Keeps ratings strictly above the threshold, drops users left with fewer
    than ``min_user_interactions`` distinct items, then numbers users and
    items in sorted order of their raw ids.
    """
    kept: dict = {}
    for user, item, rating in raw:
        if rating > rating_threshold:
            kept.setdefault(user, set()).add(item)
    kept = {u: s for u, s in kept.items() if len(s) >= min_user_interactions}
    if not kept:
        raise ValueError("no interactions left after filtering")
    user_ids = sorted(kept)
    item_ids = sorted(set().union(*kept.values()))
    item_pos = {it: j for j, it in enumerate(item_ids)}
    rows, cols = [], []
    for r, u in enumerate(user_ids):
        for it in kept[u]:
            rows.append(r)
            cols.append(item_pos[it])
    X = BinaryInteractionMatrix.from_coordinates(rows, cols, len(user_ids), len(item_ids))
    return Preprocessed(X, user_ids, item_ids)


@dataclass
class HeldOutUser:
    user: int
    fold_in: np.ndarray
    held_out: np.ndarray


@dataclass
class EvalSplit:
    """Training rows plus validation/test users split into fold-in and held-out items."""

    n_items: int
    train_users: np.ndarray
    X_train: BinaryInteractionMatrix
    val: list[HeldOutUser]
    test: list[HeldOutUser]
    spec: SplitSpec | None = None

    def role(self, name: str) -> list[HeldOutUser]:
        if name not in ("val", "test"):
            raise ValueError(f"unknown role {name!r}")
        return self.val if name == "val" else self.test


def _fold_in_count(n: int, fraction: float) -> int:
    k = math.floor(n * fraction + 1e-9)
    return min(max(k, 1), n - 1)


def make_split(X: BinaryInteractionMatrix, spec: SplitSpec) -> EvalSplit:
    """Seeded user shuffle; the last two blocks become validation and test users."""
    n_val, n_test = spec.n_heldout_users_val, spec.n_heldout_users_test
    if n_val + n_test >= X.n_users:
        raise ValueError(f"{n_val} + {n_test} held-out users leave no training users "
                         f"(only {X.n_users} users)")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(X.n_users)
    n_train = X.n_users - n_val - n_test
    train_users = np.sort(perm[:n_train])

    def holdout(users):
        out = []
        for u in np.sort(users):
            items = np.sort(X.row_items(int(u))).astype(np.int64)
            if items.size < 2:
                raise ValueError(f"user {u} has {items.size} items; cannot split")
            k = _fold_in_count(items.size, spec.fold_in_fraction)
            mask = np.zeros(items.size, dtype=bool)
            mask[rng.choice(items.size, size=k, replace=False)] = True
            out.append(HeldOutUser(int(u), items[mask], items[~mask]))
        return out

    val = holdout(perm[n_train:n_train + n_val])
    test = holdout(perm[n_train + n_val:])
    return EvalSplit(X.n_items, train_users, X.select_rows(train_users), val, test, spec)


def write_split_manifest(split: EvalSplit, path) -> Path:
    """One line per user: ``user<TAB>role<TAB>fold-in items<TAB>held-out items``.

    Training users list all their items as fold-in and nothing held out.
    """
    path = Path(path)
    lines = [f"# n_items={split.n_items}\n"]
    fmt = lambda a: ",".join(str(int(i)) for i in a)  # noqa: E731
    for r, u in enumerate(split.train_users):
        lines.append(f"{int(u)}\ttrain\t{fmt(split.X_train.row_items(r))}\t\n")
    for role in ("val", "test"):
        for h in split.role(role):
            lines.append(f"{h.user}\t{role}\t{fmt(h.fold_in)}\t{fmt(h.held_out)}\n")
    path.write_text("".join(lines))
    return path


def read_split_manifest(path) -> EvalSplit:
    n_items = None
    train_rows, val, test = [], [], []
    parse = lambda s: np.array([int(t) for t in s.split(",") if t], dtype=np.int64)  # noqa: E731
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.startswith("#"):
            if "n_items=" in line:
                n_items = int(line.split("n_items=")[1])
            continue
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
        user, role, fold_in, held_out = int(parts[0]), parts[1], parse(parts[2]), parse(parts[3])
        if role == "train":
            train_rows.append((user, fold_in))
        elif role in ("val", "test"):
            (val if role == "val" else test).append(HeldOutUser(user, fold_in, held_out))
        else:
            raise ValueError(f"{path}:{lineno}: unknown role {role!r}")
    if n_items is None:
        raise ValueError(f"{path}: missing n_items header")
    train_users = np.array([u for u, _ in train_rows], dtype=np.int64)
    rows = np.concatenate([np.full(it.size, r) for r, (_, it) in enumerate(train_rows)] or [[]])
    cols = np.concatenate([it for _, it in train_rows] or [[]])
    X_train = BinaryInteractionMatrix.from_coordinates(rows, cols, len(train_rows), n_items)
    return EvalSplit(n_items, train_users, X_train, val, test)


# --------------------------------------------------------------------------
# scoring


def score_users(model: Model, fold_ins: Sequence[np.ndarray], n_items: int | None = None) -> np.ndarray:
    """Scores for a batch of users given their fold-in items (unmasked)."""
    n_items = model.n_items if n_items is None else n_items
    Xf = BinaryInteractionMatrix.from_coordinates(
        np.concatenate([np.full(len(f), r) for r, f in enumerate(fold_ins)] or [[]]),
        np.concatenate([np.asarray(f, dtype=np.int64) for f in fold_ins] or [[]]),
        len(fold_ins), n_items)
    if isinstance(model, FullRankModel):
        return np.asarray(Xf.csr @ model.B)
    if model.kind is ModelKind.WMF:
        Uf = als_rows(Xf.csr, model.V, model.alpha, model.lam)
        return Uf @ model.V.T
    return np.asarray(Xf.csr @ model.U) @ model.V.T


def score_user(model: Model, fold_in) -> np.ndarray:
    """Item scores for one user; fold-in items are set to ``-inf``."""
    fold_in = np.asarray(fold_in, dtype=np.int64)
    s = score_users(model, [fold_in])[0]
    s[fold_in] = -np.inf
    return s


def rank_items(scores: np.ndarray, exclude=(), k: int | None = None) -> np.ndarray:
    """Items by descending score, ties broken by ascending item index."""
    s = np.asarray(scores, dtype=np.float64)
    keep = np.ones(s.size, dtype=bool)
    keep[np.asarray(exclude, dtype=np.int64)] = False
    order = np.argsort(-s, kind="stable")
    order = order[keep[order]]
    return order if k is None else order[:k]


def recall_at_k(ranked, held_out, k: int) -> float:
    held = set(int(i) for i in held_out)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not held:
        raise ValueError("empty held-out set")
    hits = sum(1 for i in list(ranked)[:k] if int(i) in held)
    return hits / min(k, len(held))


def ndcg_at_k(ranked, held_out, k: int) -> float:
    held = set(int(i) for i in held_out)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not held:
        raise ValueError("empty held-out set")
    dcg = sum(1.0 / math.log2(r + 2) for r, i in enumerate(list(ranked)[:k]) if int(i) in held)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(k, len(held))))
    return dcg / idcg


METRICS = (("recall_at_20", recall_at_k, 20),
           ("recall_at_50", recall_at_k, 50),
           ("ndcg_at_100", ndcg_at_k, 100))


@dataclass
class EvalReport:
    recall_at_20: float
    recall_at_50: float
    ndcg_at_100: float
    se_recall_20: float
    se_recall_50: float
    se_ndcg_100: float
    n_users: int
    per_user: dict = field(default_factory=dict, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_user")
        return d


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return float("nan"), float("nan")
    se = float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return float(np.mean(values)), se


def aggregate(per_user: dict[str, Sequence[float]]) -> EvalReport:
    vals = {name: np.asarray(per_user[name], dtype=np.float64) for name, _, _ in METRICS}
    (r20, s20), (r50, s50), (n100, sn) = (_mean_se(vals[name]) for name, _, _ in METRICS)
    return EvalReport(r20, r50, n100, s20, s50, sn, int(vals["recall_at_20"].size), vals)


def evaluate(model: Model, split: EvalSplit, role: str = "val", batch: int = 1024) -> EvalReport:
    """Score every held-out user of ``role`` and aggregate the three metrics."""
    users = [h for h in split.role(role) if h.held_out.size > 0]
    per_user = {name: [] for name, _, _ in METRICS}
    kmax = max(k for _, _, k in METRICS)
    for start in range(0, len(users), batch):
        chunk = users[start:start + batch]
        S = score_users(model, [h.fold_in for h in chunk], split.n_items)
        for h, s in zip(chunk, S):
            ranked = rank_items(s, h.fold_in, kmax)
            for name, fn, k in METRICS:
                per_user[name].append(fn(ranked, h.held_out, k))
    return aggregate(per_user)
