"""Weakly supervised object detection from image-level labels over region features."""

__version__ = "0.1.0"

from .core import (
    BoundingBox,
    Detection,
    FeatureBag,
    LinearScorer,
    Region,
    TrainConfig,
    validate_bag,
)
from .mil import (
    ClassCounts,
    TrainRecord,
    class_counts,
    grid_search_c,
    loss_gradient,
    loss_phi,
    loss_phi_s,
    regularized_loss,
    score_region,
    train_one,
    train_restarts,
)
from .baselines import SvmConfig, decision_value, train_linear_svm, train_max_baseline, train_mi_svm
from .evaluation import (
    EvalConfig,
    EvalReport,
    GroundTruthBox,
    average_precision,
    classification_by_detection,
    detect,
    evaluate,
    iou,
    nms,
)
from .archive import (
    read_archive,
    read_ground_truth,
    write_archive,
    write_ground_truth,
)
from .synth import SynthConfig, generate

__all__ = [
    "BoundingBox", "Detection", "FeatureBag", "LinearScorer", "Region",
    "TrainConfig", "validate_bag",
    "ClassCounts", "TrainRecord", "class_counts", "grid_search_c",
    "loss_gradient", "loss_phi", "loss_phi_s", "regularized_loss",
    "score_region", "train_one", "train_restarts",
    "SvmConfig", "decision_value", "train_linear_svm", "train_max_baseline",
    "train_mi_svm",
    "EvalConfig", "EvalReport", "GroundTruthBox", "average_precision",
    "classification_by_detection", "detect", "evaluate", "iou", "nms",
    "read_archive", "read_ground_truth", "write_archive", "write_ground_truth",
    "SynthConfig", "generate",
]
