"""Glue between a :class:`RunConfig` and the data/network/eval modules."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import data
from .config import ConfigError, RunConfig, noise_range, validate
from .network import EpochStats, MlpModel, TrainConfig, forward, save_checkpoint, train
from .osr_eval import ScoredPredictions, evaluate, oscr, roc_points, score_samples, write_curve_csv
from .simplex import SimplexCenters


@dataclass
class Inputs:
    dataset: data.LabeledDataset
    background: np.ndarray | None  # pre-loaded CSV background, if any


def load_inputs(cfg: RunConfig) -> Inputs:
    """Read or generate the dataset and check the config against it."""
    ds_cfg = cfg.dataset
    try:
        if ds_cfg.kind == "csv":
            dataset = data.load_csv(ds_cfg.path)
        elif ds_cfg.kind == "overlapping":
            dataset = data.generate_overlapping(ds_cfg.synthetic, cfg.protocol.num_known, cfg.dataset_seed)
        else:
            dataset = data.generate_blobs(ds_cfg.synthetic, cfg.dataset_seed)
        background = None
        if cfg.background.kind == "csv":
            background = data.load_background_csv(cfg.background.path)
            if background.shape[1] != dataset.dim:
                raise ConfigError(
                    f"background width {background.shape[1]} != dataset width {dataset.dim}"
                )
    except OSError as exc:
        raise ConfigError(f"cannot read input: {exc}") from None
    except data.CsvFormatError as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg, dataset.total_classes)
    return Inputs(dataset, background)


def trial_splits(cfg: RunConfig, total_classes: int) -> list[data.TrialSplit]:
    pr = cfg.protocol
    if pr.known_classes is not None:
        return data.fixed_trials(total_classes, pr.known_classes, pr.num_trials, pr.seed)
    if cfg.dataset.kind == "overlapping":
        return data.fixed_trials(total_classes, range(pr.num_known), pr.num_trials, pr.seed)
    return data.make_trials(total_classes, pr.num_known, pr.num_trials, pr.seed)


def background_for(cfg: RunConfig, inputs: Inputs, split: data.TrialSplit) -> np.ndarray | None:
    bg = cfg.background
    if bg.kind == "none":
        return None
    if bg.kind == "csv":
        return inputs.background
    lo, hi = noise_range(cfg)
    return data.generate_background(bg.count, inputs.dataset.dim, lo, hi, split.seed)


def train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    tr = cfg.train
    return TrainConfig(
        epochs=tr.epochs,
        batch_size=tr.batch_size,
        learning_rate=tr.learning_rate,
        seed=seed,
        weights=cfg.loss,
        expand_factor=tr.expand_factor,
        background_per_batch=tr.background_per_batch,
    )


def layer_dims(cfg: RunConfig, in_dim: int) -> list[int]:
    return [in_dim, *cfg.network.hidden, cfg.feature_dim]


@dataclass
class TrialResult:
    split: data.TrialSplit
    model: MlpModel
    centers: SimplexCenters
    history: list[EpochStats]
    train_view: data.DatasetView
    test_view: data.DatasetView


def train_trial(cfg: RunConfig, inputs: Inputs, split: data.TrialSplit) -> TrialResult:
    train_view, test_view = data.relabel_for_trial(inputs.dataset, split)
    model, centers, history = train(
        train_view.samples,
        train_view.labels,
        background_for(cfg, inputs, split),
        train_config(cfg, split.seed),
        layer_dims(cfg, inputs.dataset.dim),
        num_classes=len(split.known_classes),
    )
    return TrialResult(split, model, centers, history, train_view, test_view)


def predict(model: MlpModel, centers: SimplexCenters, view: data.DatasetView, mode: str) -> ScoredPredictions:
    feats, _ = forward(model, view.samples)
    return score_samples(feats, centers, mode, truth=view.labels)


def write_history(path, history: list[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_total", "mean_intra", "mean_outlier", "mean_uncertainty"])
        for h in history:
            writer.writerow([h.epoch, repr(h.total), repr(h.intra), repr(h.outlier), repr(h.uncertainty)])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_training_outputs(out_dir, result: TrialResult, label_map=None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "model.json"), result.model, result.centers)
    with open(os.path.join(out_dir, "centers.json"), "w") as fh:
        fh.write(result.centers.to_json())
    write_history(os.path.join(out_dir, "loss_history.csv"), result.history)
    if label_map is not None:
        write_json(os.path.join(out_dir, "label_map.json"), {str(k): v for k, v in label_map.items()})


def write_eval_outputs(out_dir, preds: ScoredPredictions) -> dict[str, float]:
    metrics = evaluate(preds)
    curve, _ = oscr(preds)
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "metrics.json"), metrics)
    write_curve_csv(os.path.join(out_dir, "roc.csv"), roc_points(preds))
    write_curve_csv(os.path.join(out_dir, "oscr.csv"), curve)
    return metrics


def run_trials(cfg: RunConfig, inputs: Inputs | None = None, out_dir=None) -> list[dict[str, float]]:
    """Train and evaluate every trial; optionally write ``trial_k/`` directories."""
    inputs = inputs or load_inputs(cfg)
    reports = []
    for split in trial_splits(cfg, inputs.dataset.total_classes):
        result = train_trial(cfg, inputs, split)
        preds = predict(result.model, result.centers, result.test_view, cfg.score_mode)
        if out_dir is None:
            reports.append(evaluate(preds))
            continue
        trial_dir = os.path.join(out_dir, f"trial_{split.trial_index}")
        write_training_outputs(trial_dir, result, inputs.dataset.label_map)
        write_json(os.path.join(trial_dir, "split.json"), split.to_dict())
        reports.append(write_eval_outputs(trial_dir, preds))
    return reports
