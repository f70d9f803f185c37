"""Open-set recognition with class centers fixed on a regular simplex.

Known-class features are pulled onto fixed simplex vertices, background
samples are pushed away by a margin, and an uncertainty-ratio term penalizes
the open space between centers.
"""

from .data import UNKNOWN, LabeledDataset, SyntheticSpec, TrialSplit, generate_blobs, make_trials
from .losses import BackgroundBatch, FeatureBatch, LossValue, LossWeights, total_loss
from .network import MlpModel, OptimizerState, TrainConfig, backward, forward, init_model, rmsprop_step, train
from .osr_eval import ScoredPredictions, auroc, closed_set_accuracy, oscr, score_samples
from .simplex import SimplexCenters, build_simplex, nearest_center, uncertainty_ratio

__version__ = "0.1.0"

__all__ = [
    "UNKNOWN",
    "BackgroundBatch",
    "FeatureBatch",
    "LabeledDataset",
    "LossValue",
    "LossWeights",
    "MlpModel",
    "OptimizerState",
    "ScoredPredictions",
    "SimplexCenters",
    "SyntheticSpec",
    "TrainConfig",
    "TrialSplit",
    "auroc",
    "backward",
    "build_simplex",
    "closed_set_accuracy",
    "forward",
    "generate_blobs",
    "init_model",
    "make_trials",
    "nearest_center",
    "oscr",
    "rmsprop_step",
    "score_samples",
    "total_loss",
    "train",
    "uncertainty_ratio",
]
