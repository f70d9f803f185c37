"""Open-set scoring and metrics: closed-set accuracy, ROC/AUROC and OSCR.

Scores are "known-ness" confidences: higher means more confidently known.
``truth`` uses :data:`UNKNOWN` for samples of classes unseen in training.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .data import UNKNOWN
from .simplex import SimplexCenters, _as_batch, nearest_centers, uncertainty_ratios

SCORE_MODES = ("neg_min_dist", "one_minus_u")


class MissingSamplesError(ValueError):
    """Raised when a metric needs known and unknown samples but one group is empty."""


@dataclass
class ScoredPredictions:
    scores: np.ndarray
    predicted: np.ndarray
    truth: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.predicted = np.asarray(self.predicted, dtype=np.int64)
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=np.int64)
            if self.truth.shape != self.scores.shape:
                raise ValueError("truth must have one entry per score")
        if self.predicted.shape != self.scores.shape:
            raise ValueError("predicted must have one entry per score")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def with_truth(self, truth) -> "ScoredPredictions":
        return ScoredPredictions(self.scores, self.predicted, truth)

    def _require_truth(self) -> np.ndarray:
        if self.truth is None:
            raise ValueError("ground truth has not been attached")
        return self.truth

    @property
    def known(self) -> np.ndarray:
        return self._require_truth() != UNKNOWN

    def split(self):
        """Scores and correctness for knowns, scores for unknowns."""
        known = self.known
        if not known.any() or known.all():
            raise MissingSamplesError(
                f"need both known and unknown samples (known={int(known.sum())}, "
                f"unknown={int((~known).sum())})"
            )
        correct = self.predicted[known] == self.truth[known]
        return self.scores[known], correct, self.scores[~known]


@dataclass
class CurvePoint:
    threshold: float
    x: float
    y: float


def normalize_mode(mode: str) -> str:
    m = mode.lower()
    if m not in SCORE_MODES:
        raise ValueError(f"unknown score mode {mode!r}; choose from {SCORE_MODES}")
    return m


def score_samples(features, centers: SimplexCenters, mode: str = "neg_min_dist", truth=None) -> ScoredPredictions:
    f = _as_batch(features, centers)
    mode = normalize_mode(mode)
    predicted, sq = nearest_centers(f, centers)
    if mode == "neg_min_dist":
        scores = -sq
    else:
        scores = 1.0 - uncertainty_ratios(f, centers)
    return ScoredPredictions(scores, predicted, truth)


def closed_set_accuracy(preds: ScoredPredictions) -> float:
    known = preds.known
    if not known.any():
        raise MissingSamplesError("accuracy needs at least one known sample")
    return float(np.mean(preds.predicted[known] == preds.truth[known]))


def auroc(preds: ScoredPredictions) -> float:
    """P(known score > unknown score) with ties counted as one half.

    Computed from sorted order in O(N log N).
    """
    pos, _, neg = preds.split()
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    not_above = np.searchsorted(neg_sorted, pos, side="right")
    wins = below.sum() + 0.5 * (not_above - below).sum()
    return float(wins / (len(pos) * len(neg)))


def _descending_thresholds(*groups) -> np.ndarray:
    return np.unique(np.concatenate(groups))[::-1]


def _count_at_or_above(sorted_vals: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    return len(sorted_vals) - np.searchsorted(sorted_vals, thresholds, side="left")


def roc_points(preds: ScoredPredictions) -> list[CurvePoint]:
    """TPR (known accepted) against FPR (unknown accepted), starting at +inf."""
    pos, _, neg = preds.split()
    th = _descending_thresholds(pos, neg)
    tpr = _count_at_or_above(np.sort(pos), th) / len(pos)
    fpr = _count_at_or_above(np.sort(neg), th) / len(neg)
    points = [CurvePoint(float("inf"), 0.0, 0.0)]
    points += [CurvePoint(float(t), float(x), float(y)) for t, x, y in zip(th, fpr, tpr)]
    return points


def oscr(preds: ScoredPredictions) -> tuple[list[CurvePoint], float]:
    """CCR against FPR over all thresholds and the area under it.

    CCR counts known samples that are both correctly classified and scored at
    or above the threshold.  The curve starts at (0, 0) for threshold +inf
    and reaches FPR = 1 at the lowest score.
    """
    pos, correct, neg = preds.split()
    th = _descending_thresholds(pos, neg)
    ccr = _count_at_or_above(np.sort(pos[correct]), th) / len(pos)
    fpr = _count_at_or_above(np.sort(neg), th) / len(neg)
    points = [CurvePoint(float("inf"), 0.0, 0.0)]
    points += [CurvePoint(float(t), float(x), float(y)) for t, x, y in zip(th, fpr, ccr)]
    return points, curve_area(points)


def curve_area(points: list[CurvePoint]) -> float:
    x = np.array([p.x for p in points])
    y = np.array([p.y for p in points])
    if x[-1] < 1.0:
        x = np.append(x, 1.0)
        y = np.append(y, y[-1])
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def evaluate(preds: ScoredPredictions) -> dict[str, float]:
    _, area = oscr(preds)
    return {"acc": closed_set_accuracy(preds), "auroc": auroc(preds), "oscr": area}


@dataclass
class MetricsReport:
    trials: list[dict[str, float]]
    mean: dict[str, float] = field(default_factory=dict)

    def to_dict(self):
        return {"trials": self.trials, "mean": self.mean}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def aggregate_trials(reports: list[dict[str, float]]) -> MetricsReport:
    if not reports:
        raise ValueError("need at least one trial report")
    keys = ("acc", "auroc", "oscr")
    mean = {k: float(sum(r[k] for r in reports) / len(reports)) for k in keys}
    return MetricsReport([{k: float(r[k]) for k in keys} for r in reports], mean)


def write_curve_csv(path, points: list[CurvePoint]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "x", "y"])
        for p in points:
            writer.writerow([repr(p.threshold), repr(p.x), repr(p.y)])
