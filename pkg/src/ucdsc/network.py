"""Small ReLU feature extractor, manual backprop, RMSProp, and the training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .losses import BackgroundBatch, FeatureBatch, LossWeights, total_loss
from .simplex import DimensionError, SimplexCenters, build_simplex

log = logging.getLogger(__name__)


class StaleCacheError(RuntimeError):
    """A forward cache was reused after the model changed or on another model."""


@dataclass(eq=False)
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]  # layer l: (layer_dims[l], layer_dims[l+1])
    biases: list[np.ndarray]
    version: int = 0  # bumped on every in-place update

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.version,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "layer_dims": list(self.layer_dims),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MlpModel":
        dims = [int(x) for x in data["layer_dims"]]
        weights = [np.asarray(w, dtype=np.float64) for w in data["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
        model = cls(dims, weights, biases)
        _check_model(model)
        return model


def _check_model(model: MlpModel) -> None:
    dims = model.layer_dims
    if len(model.weights) != len(dims) - 1 or len(model.biases) != len(dims) - 1:
        raise DimensionError("layer count does not match layer_dims")
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        if w.shape != (dims[l], dims[l + 1]) or b.shape != (dims[l + 1],):
            raise DimensionError(f"layer {l} parameter shapes inconsistent with layer_dims")


def init_model(layer_dims, seed: int) -> MlpModel:
    dims = [int(x) for x in layer_dims]
    if len(dims) < 2 or any(x < 1 for x in dims):
        raise ValueError(f"layer_dims needs >= 2 positive sizes, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights = [rng.normal(0.0, np.sqrt(2.0 / dims[l]), size=(dims[l], dims[l + 1])) for l in range(len(dims) - 1)]
    biases = [np.zeros(d) for d in dims[1:]]
    return MlpModel(dims, weights, biases)


@dataclass
class ForwardCache:
    model_id: int
    version: int
    activations: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]  # pre-activation output of each layer


def forward(model: MlpModel, inputs) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise DimensionError(f"inputs have shape {x.shape}, expected (batch, {model.layer_dims[0]})")
    acts, pres = [], []
    h = x
    last = model.num_layers - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        acts.append(h)
        z = h @ w + b
        pres.append(z)
        h = z if l == last else np.maximum(z, 0.0)
    return h, ForwardCache(id(model), model.version, acts, pres)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


def backward(model: MlpModel, cache: ForwardCache, grad_features) -> Gradients:
    if cache.model_id != id(model) or cache.version != model.version:
        raise StaleCacheError("forward cache does not belong to the current model state")
    g = np.asarray(grad_features, dtype=np.float64)
    if g.shape != cache.preacts[-1].shape:
        raise DimensionError(f"grad_features shape {g.shape} != output shape {cache.preacts[-1].shape}")
    gw = [None] * model.num_layers
    gb = [None] * model.num_layers
    for l in reversed(range(model.num_layers)):
        if l != model.num_layers - 1:
            g = g * (cache.preacts[l] > 0)
        gw[l] = cache.activations[l].T @ g
        gb[l] = g.sum(axis=0)
        if l > 0:
            g = g @ model.weights[l].T
    return Gradients(gw, gb)


@dataclass
class OptimizerState:
    learning_rate: float
    square_avg_w: list[np.ndarray]
    square_avg_b: list[np.ndarray]
    momentum_w: list[np.ndarray]
    momentum_b: list[np.ndarray]
    alpha: float = 0.95
    eps: float = 1e-6
    momentum: float = 0.9
    weight_decay: float = 1e-3
    l1_penalty: float = 1e-3

    @classmethod
    def for_model(cls, model: MlpModel, learning_rate: float, **hyper) -> "OptimizerState":
        if not learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        zeros = lambda ps: [np.zeros_like(p) for p in ps]  # noqa: E731
        return cls(
            learning_rate,
            zeros(model.weights),
            zeros(model.biases),
            zeros(model.weights),
            zeros(model.biases),
            **hyper,
        )


def _rmsprop_update(p, g, sq, buf, st: OptimizerState, penalize: bool) -> None:
    if penalize:
        g = g + st.weight_decay * p + st.l1_penalty * np.sign(p)
    sq *= st.alpha
    sq += (1.0 - st.alpha) * g * g
    buf *= st.momentum
    buf += g / np.sqrt(sq + st.eps)
    p -= st.learning_rate * buf


def rmsprop_step(model: MlpModel, state: OptimizerState, grads: Gradients):
    """Apply one RMSProp update in place and return ``(model, state)``.

    L2 and L1 penalties are added to the weight gradients only; biases are
    not penalized.
    """
    for l in range(model.num_layers):
        for p, g, sq, buf, penalize in (
            (model.weights[l], grads.weights[l], state.square_avg_w[l], state.momentum_w[l], True),
            (model.biases[l], grads.biases[l], state.square_avg_b[l], state.momentum_b[l], False),
        ):
            if g.shape != p.shape or sq.shape != p.shape:
                raise DimensionError(f"layer {l}: gradient/state shape does not match parameter {p.shape}")
            _rmsprop_update(p, g, sq, buf, state, penalize)
    model.version += 1
    return model, state


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 512
    learning_rate: float = 0.01
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    expand_factor: float = 100.0
    background_per_batch: int | None = None  # None: same as batch_size

    def __post_init__(self):
        for name in ("epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.background_per_batch is not None and self.background_per_batch < 1:
            raise ValueError("background_per_batch must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.expand_factor > 0:
            raise ValueError("expand_factor must be positive")


@dataclass
class EpochStats:
    epoch: int
    total: float
    intra: float
    outlier: float
    uncertainty: float


def train(
    samples,
    labels,
    background,
    config: TrainConfig,
    layer_dims,
    num_classes: int | None = None,
) -> tuple[MlpModel, SimplexCenters, list[EpochStats]]:
    """Train a fresh MLP on known-class samples with the combined loss.

    ``labels`` must already be contiguous in ``[0, num_classes)``.
    ``background`` is an (M, in_dim) array of auxiliary inputs, or None when
    ``lambda_o`` is zero.  Known and background samples go through the same
    network in one forward pass.
    """
    x = np.asarray(samples, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("training set is empty")
    if num_classes is None:
        num_classes = int(y.max()) + 1
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"labels must be remapped into [0, {num_classes})")
    dims = list(layer_dims)
    if dims[0] != x.shape[1]:
        raise DimensionError(f"network input {dims[0]} != sample width {x.shape[1]}")
    feature_dim = dims[-1]
    if feature_dim < num_classes - 1:
        raise DimensionError(f"feature_dim={feature_dim} < C-1 = {num_classes - 1}")

    use_bg = background is not None and len(background) > 0
    if config.weights.lambda_o > 0 and not use_bg:
        raise ValueError("lambda_o > 0 needs a non-empty background source")
    if use_bg:
        bg_all = np.asarray(background, dtype=np.float64)
        if bg_all.ndim != 2 or bg_all.shape[1] != x.shape[1]:
            raise DimensionError(f"background width {bg_all.shape} != sample width {x.shape[1]}")
    bg_count = config.background_per_batch or config.batch_size

    centers = build_simplex(num_classes, feature_dim, config.expand_factor)
    model = init_model(dims, config.seed)
    state = OptimizerState.for_model(model, config.learning_rate)
    rng = np.random.default_rng(config.seed)

    history = []
    n = len(x)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(4)
        steps = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xb = x[idx]
            if use_bg:
                bg_idx = rng.integers(0, len(bg_all), size=bg_count)
                xb = np.concatenate([xb, bg_all[bg_idx]])
            feats, cache = forward(model, xb)
            known = FeatureBatch(feats[: len(idx)], y[idx])
            bg_batch = BackgroundBatch(feats[len(idx) :]) if use_bg else None
            loss = total_loss(known, bg_batch, centers, config.weights)
            grad = loss.grad_features
            if use_bg:
                grad = np.concatenate([grad, loss.grad_background])
            grads = backward(model, cache, grad)
            rmsprop_step(model, state, grads)
            c = loss.components
            sums += (loss.value, c["intra"], c["outlier"], c["uncertainty"])
            steps += 1
        means = sums / steps
        if not np.all(np.isfinite(means)):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        history.append(EpochStats(epoch, *map(float, means)))
        log.debug("epoch %d total %.6g intra %.6g", epoch, means[0], means[1])
    return model, centers, history


def save_checkpoint(path, model: MlpModel, centers: SimplexCenters) -> None:
    data = model.to_dict()
    data["expand_factor"] = centers.radius
    data["num_classes"] = centers.num_classes
    with open(path, "w") as fh:
        json.dump(data, fh)


def load_checkpoint(path) -> tuple[MlpModel, SimplexCenters]:
    with open(path) as fh:
        data = json.load(fh)
    model = MlpModel.from_dict(data)
    centers = build_simplex(int(data["num_classes"]), model.layer_dims[-1], float(data["expand_factor"]))
    return model, centers
