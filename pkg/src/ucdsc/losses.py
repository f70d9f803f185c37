"""Training losses on embedded features with analytic gradients.

Three terms are combined linearly::

    total = intra + lambda_o * outlier + lambda_u * uncertainty

Gradients are taken with respect to the features (and background features);
the simplex centers are constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .simplex import DimensionError, SimplexCenters, uncertainty_parts

NORM_EPS = 1e-12


@dataclass
class FeatureBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) < 1:
            raise DimensionError(f"features must be a non-empty (n, d) matrix, got {self.features.shape}")
        if self.labels.shape != (len(self.features),):
            raise DimensionError(
                f"labels shape {self.labels.shape} does not match {len(self.features)} features"
            )

    def check(self, centers: SimplexCenters) -> None:
        if self.features.shape[1] != centers.feature_dim:
            raise DimensionError(
                f"feature width {self.features.shape[1]} != centers dim {centers.feature_dim}"
            )
        if self.labels.min() < 0 or self.labels.max() >= centers.num_classes:
            raise ValueError(f"labels must lie in [0, {centers.num_classes})")


@dataclass
class BackgroundBatch:
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DimensionError(f"background must be a (K, d) matrix, got {self.features.shape}")

    def __len__(self):
        return len(self.features)


@dataclass
class LossWeights:
    lambda_o: float = 1.0
    lambda_u: float = 5.0
    margin: float = 38.0

    def __post_init__(self):
        for name in ("lambda_o", "lambda_u", "margin"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            setattr(self, name, v)


@dataclass
class LossValue:
    value: float
    grad_features: np.ndarray
    grad_background: np.ndarray | None = None
    components: dict[str, float] = field(default_factory=dict)


def intra_loss(batch: FeatureBatch, centers: SimplexCenters) -> LossValue:
    batch.check(centers)
    n = len(batch.features)
    diff = batch.features - centers.vertices[batch.labels]
    value = float(np.einsum("nd,nd->", diff, diff)) / n
    return LossValue(value, (2.0 / n) * diff)


def outlier_loss(
    batch: FeatureBatch,
    background: BackgroundBatch,
    centers: SimplexCenters,
    margin: float,
) -> LossValue:
    """Triplet hinge pushing background features away from every known sample's center.

    All n*K pairs in the batch contribute, averaged by n*K.  The hinge has a
    zero subgradient where its argument is exactly zero.
    """
    batch.check(centers)
    if len(background) == 0:
        raise ValueError("outlier loss needs at least one background sample")
    bg = background.features
    if bg.shape[1] != centers.feature_dim:
        raise DimensionError(f"background width {bg.shape[1]} != centers dim {centers.feature_dim}")
    n, k = len(batch.features), len(bg)
    own = centers.vertices[batch.labels]
    diff = batch.features - own
    d_known = np.einsum("nd,nd->n", diff, diff)
    bg_diff = bg[:, None, :] - centers.vertices[None, :, :]
    d_bg_all = np.einsum("kcd,kcd->kc", bg_diff, bg_diff)  # (K, C)
    d_bg = d_bg_all[:, batch.labels].T  # (n, K)

    hinge = margin + d_known[:, None] - d_bg
    active = hinge > 0
    scale = 1.0 / (n * k)
    value = float(np.sum(hinge, where=active)) * scale

    act = active.astype(np.float64)
    grad_f = (2.0 * scale) * act.sum(axis=1)[:, None] * diff
    grad_bg = (-2.0 * scale) * (act.sum(axis=0)[:, None] * bg - act.T @ own)
    return LossValue(value, grad_f, grad_bg)


def uncertainty_loss(batch: FeatureBatch, centers: SimplexCenters) -> LossValue:
    """Mean ratio of nearest-center distance to mean distance of the other centers.

    The nearest index is held fixed while differentiating; at a center the
    numerator's gradient is taken as zero.
    """
    batch.check(centers)
    f = batch.features
    n, c = len(f), centers.num_classes
    nearest, dists, a, b = uncertainty_parts(f, centers)
    ratio = np.clip(a / b, 0.0, 1.0)

    diff = f[:, None, :] - centers.vertices[None, :, :]  # (n, C, d)
    rows = np.arange(n)
    safe = np.where(dists < NORM_EPS, 1.0, dists)
    unit = np.where((dists < NORM_EPS)[..., None], 0.0, diff / safe[..., None])
    grad_a = unit[rows, nearest]
    grad_b = (unit.sum(axis=1) - grad_a) / (c - 1)
    grad = (grad_a * b[:, None] - a[:, None] * grad_b) / (b * b)[:, None]
    return LossValue(float(ratio.mean()), grad / n)


def total_loss(
    batch: FeatureBatch,
    background: BackgroundBatch | None,
    centers: SimplexCenters,
    weights: LossWeights,
) -> LossValue:
    """Weighted sum of the three terms; component values are kept in ``components``.

    ``background`` may be None (or empty) only when ``lambda_o`` is zero.
    """
    has_bg = background is not None and len(background) > 0
    if weights.lambda_o > 0 and not has_bg:
        raise ValueError("lambda_o > 0 requires a non-empty background batch")

    intra = intra_loss(batch, centers)
    unc = uncertainty_loss(batch, centers)
    out_value = 0.0
    grad_bg = None
    grad = intra.grad_features
    if has_bg:
        out = outlier_loss(batch, background, centers, weights.margin)
        out_value = out.value
        grad = grad + weights.lambda_o * out.grad_features
        grad_bg = weights.lambda_o * out.grad_background
    grad = grad + weights.lambda_u * unc.grad_features
    value = intra.value + weights.lambda_o * out_value + weights.lambda_u * unc.value
    return LossValue(
        value,
        grad,
        grad_bg,
        components={"intra": intra.value, "outlier": out_value, "uncertainty": unc.value},
    )
