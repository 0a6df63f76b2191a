"""Weighted matrix factorization solvers for implicit-feedback data."""

from .models import FactorModel, FullRankModel, ModelKind, load_model, save_model
from .operators import RegKind, WeightScheme
from .pcg import SolverConfig, SolveReport, pcg_solve
from .sparse import BinaryInteractionMatrix
from .trainers import TrainConfig, objective_value, train, train_awmf, train_full_rank, train_wmf

__version__ = "0.1.0"
