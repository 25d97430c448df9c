"""Synthetic client data: Gaussian blobs, Dirichlet label skew, feature corruption.

Everything here is a pure function of the seeds carried by the specs, so the
same spec always yields bit-identical arrays.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, PartitionError

CLEAN = "clean"
CORRUPTED = "corrupted"
CORRUPTION_KINDS = ("additive_gaussian", "smoothing")
MAX_PARTITION_RETRIES = 100


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int
    feature_dim: int
    samples_per_class: int
    class_separation: float
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.samples_per_class < 1:
            raise ConfigError(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        if not self.class_separation > 0:
            raise ConfigError(f"class_separation must be > 0, got {self.class_separation}")


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str = "additive_gaussian"
    severity: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in CORRUPTION_KINDS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}; expected one of {CORRUPTION_KINDS}")
        if not self.severity >= 0:
            raise ConfigError(f"severity must be >= 0, got {self.severity}")


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    dirichlet_alpha: float = 1.0
    corrupted_client_count: int = 0
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    seed: int = 0

    def validate(self) -> None:
        if self.num_clients < 2:
            raise ConfigError(f"num_clients must be >= 2, got {self.num_clients}")
        if not self.dirichlet_alpha > 0:
            raise ConfigError(f"dirichlet_alpha must be > 0, got {self.dirichlet_alpha}")
        if not 0 <= self.corrupted_client_count <= self.num_clients:
            raise ConfigError(
                f"corrupted_client_count must lie in [0, {self.num_clients}], "
                f"got {self.corrupted_client_count}"
            )
        self.corruption.validate()


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (N x d, float64) with integer labels (N,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError(
                f"labels shape {self.labels.shape} does not match {self.features.shape[0]} rows"
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClientDataset:
    """One client's shard.

    ``quality`` is the hidden clean/corrupted tag. Only evaluation reads it;
    training and aggregation see features, labels and sizes alone.
    """

    client_id: int
    features: np.ndarray
    labels: np.ndarray
    quality: str = CLEAN

    def __len__(self) -> int:
        return self.features.shape[0]


def class_means(num_classes: int, feature_dim: int, separation: float) -> np.ndarray:
    """Centered class means with every pairwise distance equal to ``separation``.

    Uses scaled one-hot vertices when ``feature_dim >= num_classes``; otherwise
    the means sit on the first axis, adjacent ones ``separation`` apart.
    """
    means = np.zeros((num_classes, feature_dim))
    if feature_dim >= num_classes:
        means[np.arange(num_classes), np.arange(num_classes)] = separation / math.sqrt(2.0)
    else:
        means[:, 0] = separation * np.arange(num_classes)
    return means - means.mean(axis=0)


def generate(spec: DatasetSpec) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec.num_classes, spec.feature_dim, spec.class_separation)
    n = spec.samples_per_class
    labels = np.repeat(np.arange(spec.num_classes), n)
    features = means[labels] + rng.standard_normal((labels.size, spec.feature_dim))
    order = rng.permutation(labels.size)
    return Dataset(features[order], labels[order].astype(np.int64))


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split; each class contributes ``round(test_fraction * n_c)`` test rows."""
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in np.unique(data.labels):
        idx = rng.permutation(np.flatnonzero(data.labels == c))
        test_idx.append(idx[: int(round(test_fraction * idx.size))])
    test_mask = np.zeros(len(data), dtype=bool)
    test_mask[np.concatenate(test_idx)] = True
    if test_mask.all() or not test_mask.any():
        raise ConfigError("test_fraction leaves the train or test split empty")
    return (
        Dataset(data.features[~test_mask], data.labels[~test_mask]),
        Dataset(data.features[test_mask], data.labels[test_mask]),
    )


def _box_smooth(features: np.ndarray, width: int) -> np.ndarray:
    # edge-replicated padding keeps constant rows unchanged
    left = (width - 1) // 2
    padded = np.pad(features, ((0, 0), (left, width - 1 - left)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, width, axis=1)
    return windows.mean(axis=-1)


def smoothing_width(severity: float) -> int:
    return 2 * int(math.floor(severity)) + 1


def corrupt(features: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Apply a corruption to every row; returns a new array."""
    spec.validate()
    features = np.asarray(features, dtype=np.float64)
    if spec.severity == 0:
        return features.copy()
    if spec.kind == "additive_gaussian":
        rng = np.random.default_rng(spec.seed)
        return features + rng.normal(0.0, spec.severity, size=features.shape)
    width = smoothing_width(spec.severity)
    if width == 1:
        return features.copy()
    return _box_smooth(features, width)


def make_test_pair(test: Dataset, spec: CorruptionSpec) -> tuple[Dataset, Dataset]:
    if len(test) == 0:
        raise DataError("test dataset is empty")
    clean = Dataset(test.features.copy(), test.labels.copy())
    return clean, Dataset(corrupt(test.features, spec), test.labels.copy())


def _draw_assignment(labels: np.ndarray, k: int, alpha: float, rng: np.random.Generator) -> list[np.ndarray]:
    shards: list[list[np.ndarray]] = [[] for _ in range(k)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        props = rng.dirichlet(np.full(k, alpha))
        cuts = (np.cumsum(props)[:-1] * idx.size).astype(int)
        for client, part in enumerate(np.split(idx, cuts)):
            shards[client].append(part)
    return [np.sort(np.concatenate(parts)) for parts in shards]


def partition(data: Dataset, part: PartitionSpec) -> list[ClientDataset]:
    """Split ``data`` into label-skewed client shards.

    Each class is divided across clients by an independent Dirichlet draw.
    A draw that leaves any client empty is redrawn, up to
    ``MAX_PARTITION_RETRIES`` times.
    """
    part.validate()
    if len(data) == 0:
        raise ConfigError("cannot partition an empty dataset")
    k = part.num_clients
    if k > len(data):
        raise ConfigError(f"{k} clients requested but only {len(data)} samples available")
    rng = np.random.default_rng(part.seed)
    for _ in range(MAX_PARTITION_RETRIES):
        shards = _draw_assignment(data.labels, k, part.dirichlet_alpha, rng)
        if all(s.size > 0 for s in shards):
            break
    else:
        raise PartitionError(
            f"some client received no samples in each of {MAX_PARTITION_RETRIES} Dirichlet draws "
            f"(alpha={part.dirichlet_alpha}, K={k}, N={len(data)})"
        )

    corrupted = set(rng.permutation(k)[: part.corrupted_client_count].tolist())
    clients = []
    for cid, idx in enumerate(shards):
        feats = data.features[idx]
        quality = CLEAN
        if cid in corrupted:
            quality = CORRUPTED
            spec = CorruptionSpec(part.corruption.kind, part.corruption.severity, part.corruption.seed + cid)
            feats = corrupt(feats, spec)
        clients.append(ClientDataset(cid, feats, data.labels[idx].copy(), quality))
    return clients


def load_csv(path: str | Path) -> Dataset:
    """Read ``f1,...,fd,label`` rows (no header)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{lineno}: expected at least one feature and a label")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
            try:
                feats = [float(cell) for cell in row[:-1]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric feature ({exc})") from None
            try:
                label = int(row[-1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: label {row[-1]!r} is not an integer") from None
            if label < 0:
                raise DataError(f"{path}:{lineno}: negative label {label}")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64))


def write_csv(data: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for feats, label in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in feats] + [int(label)])
