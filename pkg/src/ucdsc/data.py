"""Synthetic open-set datasets, CSV ingestion, background noise, and trial splits."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

UNKNOWN = -1
TEST_FRACTION = 0.2


class CsvFormatError(ValueError):
    pass


@dataclass
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray
    total_classes: int
    # original label -> dense label; only set when ingestion had to remap
    label_map: dict[int, int] | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2 or self.labels.shape != (len(self.samples),):
            raise ValueError("samples must be (N, dim) with one label per row")
        present = np.unique(self.labels)
        if not np.array_equal(present, np.arange(self.total_classes)):
            raise ValueError(f"labels must cover every class in [0, {self.total_classes})")

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass
class SyntheticSpec:
    num_classes: int = 8
    dim: int = 16
    samples_per_class: int = 200
    center_scale: float = 10.0
    noise_std: float = 1.0

    def __post_init__(self):
        for name in ("num_classes", "dim", "samples_per_class", "center_scale", "noise_std"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def _draw_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    dirs = rng.normal(size=(spec.num_classes, spec.dim))
    return spec.center_scale * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def generate_blobs(spec: SyntheticSpec, seed: int) -> LabeledDataset:
    """Isotropic Gaussian clusters around seeded random centers of norm ``center_scale``."""
    rng = np.random.default_rng(seed)
    class_centers = _draw_centers(spec, rng)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    noise = rng.normal(0.0, spec.noise_std, size=(len(labels), spec.dim))
    return LabeledDataset(class_centers[labels] + noise, labels, spec.num_classes)


def blob_centers(spec: SyntheticSpec, seed: int) -> np.ndarray:
    """The cluster centers :func:`generate_blobs` uses for this seed."""
    return _draw_centers(spec, np.random.default_rng(seed))


def generate_overlapping(spec: SyntheticSpec, num_known: int, seed: int) -> LabeledDataset:
    """Blobs whose extra classes sit between the first ``num_known`` ones.

    Classes ``0..num_known-1`` get random centers of norm ``center_scale``;
    every further class is centered on the midpoint of a pair of those
    (pairs taken in ``itertools.combinations`` order, cycling if needed).
    """
    if not 2 <= num_known < spec.num_classes:
        raise ValueError("need 2 <= num_known < num_classes")
    rng = np.random.default_rng(seed)
    known = _draw_centers(SyntheticSpec(num_known, spec.dim, 1, spec.center_scale, spec.noise_std), rng)
    pairs = list(itertools.combinations(range(num_known), 2))
    extra = [
        (known[i] + known[j]) / 2.0
        for i, j in itertools.islice(itertools.cycle(pairs), spec.num_classes - num_known)
    ]
    class_centers = np.vstack([known, *extra])
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    noise = rng.normal(0.0, spec.noise_std, size=(len(labels), spec.dim))
    return LabeledDataset(class_centers[labels] + noise, labels, spec.num_classes)


def generate_background(count: int, dim: int, low: float, high: float, seed: int) -> np.ndarray:
    if count < 1 or dim < 1:
        raise ValueError("count and dim must be >= 1")
    if not low < high:
        raise ValueError(f"need low < high, got [{low}, {high}]")
    return np.random.default_rng(seed).uniform(low, high, size=(count, dim))


@dataclass
class TrialSplit:
    known_classes: list[int]
    unknown_classes: list[int]
    trial_index: int
    seed: int

    def __post_init__(self):
        if not self.known_classes:
            raise ValueError("a split needs at least one known class")
        if set(self.known_classes) & set(self.unknown_classes):
            raise ValueError("known and unknown classes overlap")

    def to_dict(self):
        return {
            "known_classes": list(self.known_classes),
            "unknown_classes": list(self.unknown_classes),
            "trial_index": self.trial_index,
            "seed": self.seed,
        }


def make_trials(total_classes: int, num_known: int, num_trials: int, seed: int) -> list[TrialSplit]:
    """Random known/unknown class partitions; trial k draws from seed + k."""
    if not 1 <= num_known < total_classes:
        raise ValueError(f"need 1 <= num_known < total_classes, got {num_known} of {total_classes}")
    if num_trials < 1:
        raise ValueError("num_trials must be >= 1")
    splits = []
    for k in range(num_trials):
        trial_seed = seed + k
        chosen = np.random.default_rng(trial_seed).choice(total_classes, size=num_known, replace=False)
        known = sorted(int(c) for c in chosen)
        unknown = [c for c in range(total_classes) if c not in known]
        splits.append(TrialSplit(known, unknown, k, trial_seed))
    return splits


@dataclass
class DatasetView:
    samples: np.ndarray
    labels: np.ndarray  # remapped known ids, or UNKNOWN
    original_labels: np.ndarray
    class_map: dict[int, int] = field(default_factory=dict)  # original -> remapped

    @property
    def known_mask(self) -> np.ndarray:
        return self.labels != UNKNOWN


def relabel_for_trial(dataset: LabeledDataset, split: TrialSplit) -> tuple[DatasetView, DatasetView]:
    """Split into (train, test) views for one trial.

    Known classes are renumbered 0..C-1 in ``split.known_classes`` order and
    divided 80/20 per class (test count rounded down).  Unknown-class samples
    are labelled ``UNKNOWN`` and go to the test view only.
    """
    for c in (*split.known_classes, *split.unknown_classes):
        if not 0 <= c < dataset.total_classes:
            raise ValueError(f"split references class {c}, dataset has {dataset.total_classes}")
    class_map = {int(c): i for i, c in enumerate(split.known_classes)}
    rng = np.random.default_rng(split.seed)
    train_idx, test_idx = [], []
    for c in split.known_classes:
        members = np.flatnonzero(dataset.labels == c)
        members = members[rng.permutation(len(members))]
        n_test = int(np.floor(TEST_FRACTION * len(members)))
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    unknown = np.flatnonzero(np.isin(dataset.labels, split.unknown_classes))
    test_idx.append(unknown)
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))

    def view(idx):
        orig = dataset.labels[idx]
        remapped = np.array([class_map.get(int(o), UNKNOWN) for o in orig], dtype=np.int64)
        return DatasetView(dataset.samples[idx], remapped, orig, dict(class_map))

    return view(train_idx), view(test_idx)


def _parse_rows(path, with_label: bool):
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise CsvFormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            cells = row[1:] if with_label else row
            if with_label:
                try:
                    labels.append(int(row[0]))
                except ValueError:
                    raise CsvFormatError(f"{path}:{lineno}: label {row[0]!r} is not an integer") from None
            try:
                rows.append([float(cell) for cell in cells])
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    if with_label and width < 2:
        raise CsvFormatError(f"{path}: rows need a label and at least one feature")
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64)


def load_csv(path) -> LabeledDataset:
    """Read a header-less CSV: integer label, then feature columns.

    Labels that are not exactly ``0..K-1`` are remapped in sorted order; the
    mapping is kept on ``label_map``.
    """
    samples, raw = _parse_rows(path, with_label=True)
    present = np.unique(raw)
    label_map = None
    labels = raw
    if not np.array_equal(present, np.arange(len(present))):
        label_map = {int(o): i for i, o in enumerate(present)}
        labels = np.searchsorted(present, raw)
        log.warning("labels in %s are not dense; remapped %s", path, label_map)
    return LabeledDataset(samples, labels, len(present), label_map)


def load_background_csv(path) -> np.ndarray:
    """Unlabelled background rows: every column is a feature."""
    samples, _ = _parse_rows(path, with_label=False)
    return samples


def save_csv(path, dataset: LabeledDataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for label, row in zip(dataset.labels, dataset.samples):
            writer.writerow([int(label), *(repr(float(v)) for v in row)])


def fixed_trials(total_classes: int, known_classes, num_trials: int, seed: int) -> list[TrialSplit]:
    """Trials that all share one known set but get distinct seeds (seed + k)."""
    known = [int(c) for c in known_classes]
    unknown = [c for c in range(total_classes) if c not in known]
    return [TrialSplit(list(known), list(unknown), k, seed + k) for k in range(num_trials)]
