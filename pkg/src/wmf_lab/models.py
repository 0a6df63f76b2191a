"""Trained model containers and their on-disk format.

Binary layout (little endian)::

    magic      8 bytes  b"WMFLAB\\x00\\x01"
    kind       u32      index into MODEL_TAGS
    n_users    u64
    n_items    u64
    d          u64      0 for full-rank
    alpha      f64
    lam        f64
    seed       i64
    payload    column-major f64: U then V, or B

A plain ``key = value`` sidecar with the same fields is written next to it
as ``<path>.meta``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import RegKind

MAGIC = b"WMFLAB\x00\x01"
_HEADER = struct.Struct("<8sIQQQddq")


class ModelKind(enum.Enum):
    AWMF_WEIGHT_DECAY = "awmf-wd"
    WMF = "wmf"
    AWMF_DROPOUT = "awmf-dropout"
    AWMF_DATA_WEIGHT_DECAY = "awmf-data-wd"
    FULL_RANK = "full-rank"

    @property
    def reg(self) -> RegKind | None:
        return _REG[self]

    @property
    def asymmetric(self) -> bool:
        return self not in (ModelKind.WMF, ModelKind.FULL_RANK)


_REG = {
    ModelKind.AWMF_WEIGHT_DECAY: RegKind.WEIGHT_DECAY,
    ModelKind.AWMF_DROPOUT: RegKind.DROPOUT,
    ModelKind.AWMF_DATA_WEIGHT_DECAY: RegKind.DATA_WEIGHT_DECAY,
    ModelKind.WMF: RegKind.WEIGHT_DECAY,
    ModelKind.FULL_RANK: None,
}

MODEL_TAGS = list(ModelKind)


@dataclass(eq=False)
class FactorModel:
    """Low-rank model; ``U`` is ``n_users x d`` for WMF and ``n_items x d`` otherwise."""

    kind: ModelKind
    U: np.ndarray
    V: np.ndarray
    alpha: float
    lam: float
    seed: int = 0
    n_users: int = 0
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind is ModelKind.FULL_RANK:
            raise ValueError("use FullRankModel for the full-rank kind")
        if self.U.shape[1] != self.V.shape[1]:
            raise ValueError(f"rank mismatch: U {self.U.shape}, V {self.V.shape}")
        if self.kind.asymmetric and self.U.shape[0] != self.V.shape[0]:
            raise ValueError("asymmetric models need U and V of shape n_items x d")
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.V))):
            raise ValueError("model factors must be finite")

    @property
    def d(self) -> int:
        return self.V.shape[1]

    @property
    def n_items(self) -> int:
        return self.V.shape[0]


@dataclass(eq=False)
class FullRankModel:
    B: np.ndarray
    alpha: float
    lam: float
    seed: int = 0
    n_users: int = 0
    diagnostics: dict = field(default_factory=dict, repr=False)
    kind: ModelKind = field(default=ModelKind.FULL_RANK, init=False)

    def __post_init__(self):
        if self.B.ndim != 2 or self.B.shape[0] != self.B.shape[1]:
            raise ValueError(f"B must be square, got {self.B.shape}")
        if not np.all(np.isfinite(self.B)):
            raise ValueError("B must be finite")

    @property
    def d(self) -> int:
        return 0

    @property
    def n_items(self) -> int:
        return self.B.shape[0]


Model = FactorModel | FullRankModel


def save_model(model: Model, path) -> Path:
    path = Path(path)
    n_items = model.n_items
    header = _HEADER.pack(MAGIC, MODEL_TAGS.index(model.kind), model.n_users, n_items,
                          model.d, float(model.alpha), float(model.lam), int(model.seed))
    if isinstance(model, FullRankModel):
        blocks = [model.B]
    else:
        blocks = [model.U, model.V]
    with open(path, "wb") as fh:
        fh.write(header)
        for M in blocks:
            fh.write(np.asarray(M, dtype="<f8").tobytes(order="F"))
    meta = {
        "kind": model.kind.value,
        "n_users": model.n_users,
        "n_items": n_items,
        "d": model.d,
        "alpha": repr(float(model.alpha)),
        "lambda": repr(float(model.lam)),
        "seed": model.seed,
    }
    Path(f"{path}.meta").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))
    return path


def load_model(path) -> Model:
    raw = Path(path).read_bytes()
    magic, tag, n_users, n_items, d, alpha, lam, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a model file")
    kind = MODEL_TAGS[tag]
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)

    def take(offset, rows, cols):
        block = data[offset:offset + rows * cols]
        if block.size != rows * cols:
            raise ValueError(f"{path}: truncated payload")
        return np.array(block.reshape((rows, cols), order="F"), dtype=np.float64, order="F")

    if kind is ModelKind.FULL_RANK:
        return FullRankModel(take(0, n_items, n_items), alpha, lam, seed, n_users)
    u_rows = n_users if kind is ModelKind.WMF else n_items
    U = take(0, u_rows, d)
    V = take(u_rows * d, n_items, d)
    return FactorModel(kind, U, V, alpha, lam, seed, n_users)
