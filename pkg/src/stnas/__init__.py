"""Architecture search for spatial-temporal forecasting, proposed by a
language model (or a scripted stand-in) and scored by short training runs."""

from .arch import ArchSpec, ModelConfig, enumerate_space, forward, init_model
from .data import load_dataset, synthesize_dataset, window_split
from .memory import Bank, EvalRecord
from .metrics import Metrics, compute_metrics, evaluate
from .policy import StagePlan, ThoughtMode, generate_cot, generate_tot, stage_for_round
from .prompts import Stage
from .search import DataSource, RunConfig, run_search
from .st_ops import CellKind
from .training import TrainConfig, quick_tune

__all__ = [
    "ArchSpec", "Bank", "CellKind", "DataSource", "EvalRecord", "Metrics", "ModelConfig",
    "RunConfig", "Stage", "StagePlan", "ThoughtMode", "TrainConfig", "compute_metrics",
    "enumerate_space", "evaluate", "forward", "generate_cot", "generate_tot", "init_model",
    "load_dataset", "quick_tune", "run_search", "stage_for_round", "synthesize_dataset",
    "window_split",
]
