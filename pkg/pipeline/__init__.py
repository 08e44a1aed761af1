"""Model assembly, loss, training, evaluation, ablations and the model file format."""
from .ablation import parse_grid, run_ablation
from .loss import compute_loss, head_losses
from .metrics import (
    Predictions,
    compute_metrics,
    cosine_similarity_matrix,
    evaluate,
    predict,
    reduced_representations,
)
from .model import ForwardOutputs, GamedModel, forward
from .serialization import FORMAT_VERSION, MAGIC, load_model, save_model
from .trainer import METRICS_COLUMNS, Trainer, TrainingLog, train

__all__ = [
    "GamedModel",
    "ForwardOutputs",
    "forward",
    "compute_loss",
    "head_losses",
    "Trainer",
    "TrainingLog",
    "METRICS_COLUMNS",
    "train",
    "Predictions",
    "compute_metrics",
    "predict",
    "evaluate",
    "cosine_similarity_matrix",
    "reduced_representations",
    "parse_grid",
    "run_ablation",
    "MAGIC",
    "FORMAT_VERSION",
    "save_model",
    "load_model",
]
