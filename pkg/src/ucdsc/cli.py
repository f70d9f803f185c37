"""Command-line entry point: ``ucdsc simplex-check|train|eval|trials|ablate``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import experiment
from .config import ConfigError, RunConfig, load_config, parse_config, with_overrides
from .data import CsvFormatError
from .network import load_checkpoint
from .osr_eval import SCORE_MODES, MissingSamplesError, aggregate_trials, normalize_mode
from .simplex import DimensionError, build_simplex

log = logging.getLogger("ucdsc")

ABLATION_AXES = ("lambda_o", "lambda_u", "margin", "expand_factor", "batch_size")
DEFAULT_MAX_CELLS = 64


class UsageError(Exception):
    pass


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.protocol.seed = args.seed
    if getattr(args, "score_mode", None):
        cfg.score_mode = normalize_mode(args.score_mode)
    return cfg


def cmd_simplex_check(args) -> int:
    centers = build_simplex(args.classes, args.dim, args.radius)
    dev = centers.invariant_deviations()
    gram = centers.vertices @ centers.vertices.T
    off = float(gram[0, 1])
    print(f"C={centers.num_classes} d={centers.feature_dim} r={centers.radius}")
    print(f"pairwise dot: {off!r} (target {-(args.radius ** 2) / (args.classes - 1)!r})")
    for name, value in dev.items():
        print(f"max {name} deviation: {value:.3e}")
    ok = centers.check_invariants()
    print("invariants: OK" if ok else "invariants: FAILED")
    return 0 if ok else 1


def _pick_split(cfg, inputs, trial: int):
    splits = experiment.trial_splits(cfg, inputs.dataset.total_classes)
    if not 0 <= trial < len(splits):
        raise UsageError(f"--trial must be in [0, {len(splits)})")
    return splits[trial]


def cmd_train(args) -> int:
    cfg = _load(args)
    inputs = experiment.load_inputs(cfg)
    split = _pick_split(cfg, inputs, args.trial)
    result = experiment.train_trial(cfg, inputs, split)
    experiment.write_training_outputs(args.out, result, inputs.dataset.label_map)
    print(f"trained trial {split.trial_index}: final mean loss {result.history[-1].total:.6g}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    inputs = experiment.load_inputs(cfg)
    split = _pick_split(cfg, inputs, args.trial)
    try:
        model, centers = load_checkpoint(args.checkpoint)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    if model.layer_dims[0] != inputs.dataset.dim:
        raise DimensionError(
            f"checkpoint expects {model.layer_dims[0]} inputs, dataset has {inputs.dataset.dim}"
        )
    if centers.num_classes != len(split.known_classes):
        raise DimensionError(
            f"checkpoint has {centers.num_classes} classes, split has {len(split.known_classes)} known"
        )
    train_view, test_view = experiment.data.relabel_for_trial(inputs.dataset, split)
    view = test_view if args.view == "test" else train_view
    preds = experiment.predict(model, centers, view, cfg.score_mode)
    preds.split()  # fail before writing anything if a group is missing
    metrics = experiment.write_eval_outputs(args.out, preds)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_trials(args) -> int:
    cfg = _load(args)
    inputs = experiment.load_inputs(cfg)
    reports = experiment.run_trials(cfg, inputs, out_dir=args.out)
    summary = aggregate_trials(reports)
    experiment.write_json(os.path.join(args.out, "summary.json"), summary.to_dict())
    print(json.dumps(summary.mean, sort_keys=True))
    return 0


def _read_grid(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read grid {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    unknown = sorted(set(raw) - {"base", "base_config", "grid", "max_cells"})
    if unknown:
        raise ConfigError(f"grid: unknown keys {unknown}")
    if ("base" in raw) == ("base_config" in raw):
        raise ConfigError("grid: give exactly one of 'base' or 'base_config'")
    if "base" in raw:
        base = parse_config(raw["base"])
    else:
        base = load_config(os.path.join(os.path.dirname(os.path.abspath(path)), raw["base_config"]))
    grid = raw.get("grid")
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid: 'grid' must be a non-empty object")
    bad = sorted(set(grid) - set(ABLATION_AXES))
    if bad:
        raise ConfigError(f"grid: cannot vary {bad}; allowed axes {list(ABLATION_AXES)}")
    axes = [a for a in ABLATION_AXES if a in grid]
    for a in axes:
        if not isinstance(grid[a], list) or not grid[a]:
            raise ConfigError(f"grid: '{a}' must be a non-empty list")
    return base, axes, [grid[a] for a in axes], int(raw.get("max_cells", DEFAULT_MAX_CELLS))


def _run_cell(cfg: RunConfig):
    reports = experiment.run_trials(cfg)
    return aggregate_trials(reports).mean


def cmd_ablate(args) -> int:
    base, axes, values, max_cells = _read_grid(args.config)
    if args.seed is not None:
        base.protocol.seed = args.seed
    if args.score_mode:
        base.score_mode = normalize_mode(args.score_mode)
    cells = list(itertools.product(*values))
    if len(cells) > max_cells:
        raise ConfigError(f"grid has {len(cells)} cells, above max_cells={max_cells}")
    configs = [with_overrides(base, **dict(zip(axes, cell))) for cell in cells]
    experiment.load_inputs(base)  # surface data errors before any work

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            means = list(pool.map(_run_cell, configs))
    else:
        means = [_run_cell(c) for c in configs]

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "ablation.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*axes, "auroc", "oscr", "acc"])
        for cell, m in zip(cells, means):
            writer.writerow([*cell, repr(m["auroc"]), repr(m["oscr"]), repr(m["acc"])])
    print(f"wrote {len(cells)} rows to {os.path.join(args.out, 'ablation.csv')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ucdsc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simplex-check", help="build a simplex and verify its invariants")
    p.add_argument("--classes", "-C", type=int, required=True)
    p.add_argument("--dim", "-d", type=int, required=True)
    p.add_argument("--radius", "-r", type=float, default=1.0)
    p.set_defaults(func=cmd_simplex_check)

    def common(p, out_required=True):
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=out_required)
        p.add_argument("--seed", type=int, default=None, help="override protocol.seed")
        p.add_argument("--score-mode", choices=SCORE_MODES, default=None)

    p = sub.add_parser("train", help="train one trial and write a checkpoint")
    common(p)
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one trial split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--view", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trials", help="train and evaluate every trial, write summary.json")
    common(p)
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser("ablate", help="sweep loss/training hyperparameters over a grid")
    common(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, DimensionError, MissingSamplesError, CsvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # argument errors from the library (e.g. radius <= 0)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
