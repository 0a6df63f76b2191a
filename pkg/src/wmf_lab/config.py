"""Experiment configuration read from an INI file with sections.

Every field has a default, and :meth:`ExperimentConfig.as_dict` returns the
fully resolved settings so reports can carry them verbatim.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import SplitSpec
from .models import ModelKind
from .sweep import DEFAULT_ALPHAS, DEFAULT_LAMBDAS, ExpansionRule
from .trainers import TrainConfig

#: user count from which the fixed 10k/10k held-out convention applies
LARGE_DATASET_USERS = 100_000
LARGE_HELDOUT = 10_000
#: held-out share per role below that size (10k of ML-20M's ~137k users)
HELDOUT_FRACTION = 0.073


def parse_list(text) -> tuple[float, ...]:
    """``"1, 2,5"`` or ``"1 2 5"`` -> ``(1.0, 2.0, 5.0)``."""
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    parts = [p for p in str(text).replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def heldout_counts(n_users: int) -> tuple[int, int]:
    """Default (validation, test) held-out user counts for a dataset size."""
    if n_users >= LARGE_DATASET_USERS:
        return LARGE_HELDOUT, LARGE_HELDOUT
    k = max(1, round(n_users * HELDOUT_FRACTION))
    if 2 * k >= n_users:
        k = max(0, (n_users - 1) // 2)
    return k, k


@dataclass
class DataSection:
    path: str = ""
    format: str = "auto"
    error_budget: int = 0
    max_users: int = 0
    max_items: int = 0


@dataclass
class SplitSection:
    # 0 means "derive from the dataset size"
    n_heldout_users_val: int = 0
    n_heldout_users_test: int = 0
    fold_in_fraction: float = 0.8
    rating_threshold: float = 3.0
    min_user_interactions: int = 5


@dataclass
class ModelSection:
    kind: str = ModelKind.AWMF_WEIGHT_DECAY.value
    rank: int = 100


@dataclass
class SweepSection:
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    select_metric: str = "ndcg_at_100"
    expand: bool = True
    workers: int = 1


@dataclass
class SolverSection:
    n_alternations: int = 20
    objective_rtol: float = 1e-4
    rel_tol: float = 1e-6
    max_iter: int = 0
    precondition: bool = True
    block_size: int = 256


@dataclass
class RunSection:
    seed: int = 98765
    out: str = "out"
    threads: int = 0


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    split: SplitSection = field(default_factory=SplitSection)
    model: ModelSection = field(default_factory=ModelSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    solver: SolverSection = field(default_factory=SolverSection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "ExperimentConfig":
        if not self.sweep.alphas or not self.sweep.lambdas:
            raise ValueError("sweep grids must be non-empty")
        if any(a < 1 for a in self.sweep.alphas):
            raise ValueError("alpha values must be >= 1")
        if any(lam < 0 for lam in self.sweep.lambdas):
            raise ValueError("lambda values must be >= 0")
        kind = self.kind
        if kind is not ModelKind.FULL_RANK and self.model.rank < 1:
            raise ValueError("rank must be >= 1 for factor models")
        if not 0 < self.split.fold_in_fraction < 1:
            raise ValueError("fold_in_fraction must be in (0, 1)")
        return self

    @property
    def kind(self) -> ModelKind:
        return ModelKind(self.model.kind)

    def train_config(self) -> TrainConfig:
        s = self.solver
        return TrainConfig(n_alternations=s.n_alternations, objective_rtol=s.objective_rtol,
                           rel_tol=s.rel_tol, max_iter=s.max_iter or None,
                           init_seed=self.run.seed, precondition=s.precondition,
                           block_size=s.block_size)

    def expansion_rule(self) -> ExpansionRule:
        return ExpansionRule(enabled=self.sweep.expand)

    def split_spec(self, n_users: int) -> SplitSpec:
        auto_val, auto_test = heldout_counts(n_users)
        sp = self.split
        return SplitSpec(sp.n_heldout_users_val or auto_val,
                         sp.n_heldout_users_test or auto_test,
                         sp.fold_in_fraction, sp.rating_threshold,
                         sp.min_user_interactions, self.run.seed)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sweep"]["alphas"] = list(self.sweep.alphas)
        d["sweep"]["lambdas"] = list(self.sweep.lambdas)
        return d

    # ---------------------------------------------------------------- io

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        return cls.from_parser(parser)

    @classmethod
    def from_string(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        return cls.from_parser(parser)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "ExperimentConfig":
        cfg = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        for section in parser.sections():
            if section not in known:
                raise ValueError(f"unknown config section [{section}]")
            target = getattr(cfg, section)
            types = {f.name: f for f in dataclasses.fields(target)}
            for key, raw in parser.items(section):
                if key not in types:
                    raise ValueError(f"unknown key {key!r} in [{section}]")
                setattr(target, key, _coerce(getattr(target, key), raw, parser, section, key))
        return cfg.validate()

    def to_ini(self) -> str:
        lines = []
        for section, values in self.as_dict().items():
            lines.append(f"[{section}]")
            for key, v in values.items():
                if isinstance(v, list):
                    v = ", ".join(repr(x) for x in v)
                lines.append(f"{key} = {v}")
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_ini())
        return path


def _coerce(default, raw: str, parser, section, key):
    if isinstance(default, bool):
        return parser.getboolean(section, key)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return parse_list(raw)
    return raw.strip()
