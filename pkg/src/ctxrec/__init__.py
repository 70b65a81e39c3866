"""Context-aware recommendation: contextual data ingestion, recommenders and evaluation."""

from importlib import resources as _resources

from .core import (CarsError, ContextSchema, ContextSituation, DataFormatError, DatasetStats, RatingTable,
                   UnknownConditionError, compute_stats)
from .engine import (HyperParams, Recommender, TaskError, TrainingDiverged, UnknownAlgorithmError, algorithms,
                     create, fit, predict, rank)
from .evaluation import CrossValidation, EvalReport, GivenRatio, evaluate
from .ingest import binarize, prepare_workspace, read_ratings, write_binary

__version__ = "0.1.0"


def sample_data_dir():
    """Directory holding the bundled sample ratings and configuration files."""
    return _resources.files(__name__) / "data"


__all__ = [
    "CarsError", "ContextSchema", "ContextSituation", "CrossValidation", "DataFormatError", "DatasetStats",
    "EvalReport", "GivenRatio", "HyperParams", "RatingTable", "Recommender", "TaskError", "TrainingDiverged",
    "UnknownAlgorithmError", "UnknownConditionError", "algorithms", "binarize", "compute_stats", "create",
    "evaluate", "fit", "predict", "prepare_workspace", "rank", "read_ratings", "sample_data_dir",
    "write_binary",
]
