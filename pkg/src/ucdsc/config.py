"""JSON run configuration with strict validation.

Every section rejects unknown keys so that a misspelled hyperparameter is an
error rather than a silently ignored default.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from typing import Any

from .data import SyntheticSpec
from .losses import LossWeights
from .osr_eval import normalize_mode


class ConfigError(ValueError):
    pass


def _take(section: str, raw: Any, allowed: set[str]) -> dict[str, Any]:
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected a JSON object")
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")
    return raw


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # synthetic | overlapping | csv
    path: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    seed: int | None = None  # defaults to the protocol seed


@dataclass
class BackgroundConfig:
    kind: str = "noise"  # noise | csv | none
    path: str | None = None
    count: int = 2000
    low: float | None = None  # default: -1.5 * synthetic center_scale
    high: float | None = None


@dataclass
class ProtocolConfig:
    num_known: int = 4
    num_trials: int = 5
    seed: int = 0
    known_classes: list[int] | None = None  # fixed known set for every trial


@dataclass
class NetworkConfig:
    hidden: list[int] = field(default_factory=lambda: [128, 64])
    feature_dim: int | None = None  # default: num_known


@dataclass
class TrainSection:
    epochs: int = 400
    batch_size: int = 512
    learning_rate: float = 0.01
    expand_factor: float = 100.0
    background_per_batch: int | None = None


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossWeights = field(default_factory=LossWeights)
    score_mode: str = "neg_min_dist"

    @property
    def feature_dim(self) -> int:
        return self.network.feature_dim or self.protocol.num_known

    @property
    def dataset_seed(self) -> int:
        return self.protocol.seed if self.dataset.seed is None else self.dataset.seed


def _flat(cls, section: str, raw: Any):
    names = {f.name for f in fields(cls)}
    data = _take(section, raw, names)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def parse_config(raw: dict[str, Any]) -> RunConfig:
    top = _take("config", raw, {f.name for f in fields(RunConfig)})
    cfg = RunConfig()
    if "dataset" in top:
        ds = dict(_take("dataset", top["dataset"], {"kind", "path", "synthetic", "seed"}))
        syn = ds.pop("synthetic", None)
        cfg.dataset = _flat(DatasetConfig, "dataset", ds)
        if syn is not None:
            cfg.dataset.synthetic = _flat(SyntheticSpec, "dataset.synthetic", syn)
    if "background" in top:
        cfg.background = _flat(BackgroundConfig, "background", top["background"])
    if "protocol" in top:
        cfg.protocol = _flat(ProtocolConfig, "protocol", top["protocol"])
    if "network" in top:
        cfg.network = _flat(NetworkConfig, "network", top["network"])
    if "train" in top:
        cfg.train = _flat(TrainSection, "train", top["train"])
    if "loss" in top:
        cfg.loss = _flat(LossWeights, "loss", top["loss"])
    if "score_mode" in top:
        cfg.score_mode = top["score_mode"]
    validate(cfg)
    return cfg


def validate(cfg: RunConfig, total_classes: int | None = None) -> None:
    """Check cross-field preconditions; raises :class:`ConfigError`."""
    ds, bg, pr, tr = cfg.dataset, cfg.background, cfg.protocol, cfg.train
    if ds.kind not in ("synthetic", "overlapping", "csv"):
        raise ConfigError(f"dataset.kind must be synthetic, overlapping or csv, got {ds.kind!r}")
    if ds.kind == "csv" and not ds.path:
        raise ConfigError("dataset.path is required for csv datasets")
    if bg.kind not in ("noise", "csv", "none"):
        raise ConfigError(f"background.kind must be noise, csv or none, got {bg.kind!r}")
    if bg.kind == "csv" and not bg.path:
        raise ConfigError("background.path is required for csv background")
    if bg.kind == "noise":
        if bg.count < 1:
            raise ConfigError("background.count must be >= 1")
        lo, hi = noise_range(cfg)
        if not lo < hi:
            raise ConfigError("background.low must be < background.high")
    if cfg.loss.lambda_o > 0 and bg.kind == "none":
        raise ConfigError("loss.lambda_o > 0 requires a background source")
    if total_classes is None and ds.kind != "csv":
        total_classes = ds.synthetic.num_classes
    if pr.num_trials < 1:
        raise ConfigError("protocol.num_trials must be >= 1")
    if pr.known_classes is not None:
        if len(set(pr.known_classes)) != len(pr.known_classes) or len(pr.known_classes) != pr.num_known:
            raise ConfigError("protocol.known_classes must list num_known distinct classes")
    if total_classes is not None:
        if not 1 <= pr.num_known < total_classes:
            raise ConfigError(f"protocol.num_known must be in [1, {total_classes})")
        if pr.known_classes is not None and not all(0 <= c < total_classes for c in pr.known_classes):
            raise ConfigError("protocol.known_classes out of range")
    if ds.kind == "overlapping" and ds.synthetic.num_classes <= pr.num_known:
        raise ConfigError("overlapping datasets need more classes than num_known")
    c = pr.num_known
    if c < 2:
        raise ConfigError("protocol.num_known must be >= 2 (the simplex needs two centers)")
    if cfg.feature_dim < c - 1:
        raise ConfigError(f"network.feature_dim={cfg.feature_dim} violates d >= C-1 = {c - 1}")
    if any(h < 1 for h in cfg.network.hidden):
        raise ConfigError("network.hidden sizes must be >= 1")
    for name in ("epochs", "batch_size"):
        if getattr(tr, name) < 1:
            raise ConfigError(f"train.{name} must be >= 1")
    if tr.background_per_batch is not None and tr.background_per_batch < 1:
        raise ConfigError("train.background_per_batch must be >= 1")
    if not tr.learning_rate > 0 or not tr.expand_factor > 0:
        raise ConfigError("train.learning_rate and train.expand_factor must be positive")
    try:
        cfg.score_mode = normalize_mode(cfg.score_mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def noise_range(cfg: RunConfig) -> tuple[float, float]:
    scale = 1.5 * cfg.dataset.synthetic.center_scale
    lo = -scale if cfg.background.low is None else cfg.background.low
    hi = scale if cfg.background.high is None else cfg.background.high
    return float(lo), float(hi)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    from dataclasses import asdict

    return asdict(cfg)


def with_overrides(cfg: RunConfig, **values) -> RunConfig:
    """Copy of ``cfg`` with ablation axes (lambda_o, lambda_u, margin, expand_factor, batch_size) replaced."""
    new = copy.deepcopy(cfg)
    for key, value in values.items():
        if key in ("lambda_o", "lambda_u", "margin"):
            setattr(new.loss, key, float(value))
        elif key in ("expand_factor", "batch_size"):
            setattr(new.train, key, value)
        else:
            raise ConfigError(f"cannot ablate over {key!r}")
    new.loss = LossWeights(new.loss.lambda_o, new.loss.lambda_u, new.loss.margin)
    validate(new)
    return new
