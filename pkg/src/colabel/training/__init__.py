"""
Training and evaluation: losses, the training loop, metrics, correction and convergence.
"""

from colabel.training.convergence import (
    NOT_REACHED,
    ConvergenceReport,
    compare_convergence,
    write_convergence_csv,
    write_convergence_json,
)
from colabel.training.correction import (
    CorrectionEntry,
    CorrectionInputs,
    CorrectionResult,
    correct_scores,
    match_correct,
    write_corrections,
)
from colabel.training.losses import (
    branch_loss,
    compute_losses,
    fused_loss,
    harmonization_loss,
    triplet_loss,
)
from colabel.training.metrics import (
    accuracy,
    average_precision,
    collect_logits,
    evaluate_accuracy,
    evaluate_map,
    mean_average_precision,
    retrieval_map,
)
from colabel.training.models import (
    Batch,
    EpochRecord,
    LossReport,
    LossWeights,
    RunHistory,
    TrainConfig,
    TrainStageConfig,
)
from colabel.training.trainer import load_history, save_run, total_step, train, write_history

__all__ = [
    "NOT_REACHED",
    "Batch",
    "ConvergenceReport",
    "CorrectionEntry",
    "CorrectionInputs",
    "CorrectionResult",
    "EpochRecord",
    "LossReport",
    "LossWeights",
    "RunHistory",
    "TrainConfig",
    "TrainStageConfig",
    "accuracy",
    "average_precision",
    "branch_loss",
    "collect_logits",
    "compare_convergence",
    "compute_losses",
    "correct_scores",
    "evaluate_accuracy",
    "evaluate_map",
    "fused_loss",
    "harmonization_loss",
    "load_history",
    "match_correct",
    "mean_average_precision",
    "retrieval_map",
    "save_run",
    "total_step",
    "train",
    "triplet_loss",
    "write_convergence_csv",
    "write_convergence_json",
    "write_corrections",
    "write_history",
]
