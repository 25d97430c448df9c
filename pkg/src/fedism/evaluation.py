"""Test-set metrics, clean/corrupted reports and loss-landscape slices."""

from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MetricError
from .model import Classifier, LogitAdjustment
from .synthdata import CLEAN, CORRUPTED, Dataset

AUC_AVERAGING = "macro"


def _nonempty(data: Dataset) -> None:
    if len(data) == 0:
        raise MetricError("empty test set")


def accuracy(model: Classifier, theta: np.ndarray, data: Dataset, adj: LogitAdjustment | None = None) -> float:
    """Fraction of argmax-correct predictions (ties go to the lowest class index)."""
    _nonempty(data)
    logits = model.adjust_logits(model.forward(theta, data.features), adj)
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs earn half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative samples")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    # average 1-based ranks over runs of tied scores
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], scores.size]
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    rank_sum = ranks[positive].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def macro_auc_from_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """One-vs-rest AUC averaged over classes that have positives and negatives."""
    labels = np.asarray(labels)
    present = np.unique(labels)
    if present.size < 2:
        raise MetricError(f"AUC undefined: test set contains only class(es) {present.tolist()}")
    return float(np.mean([binary_auc(scores[:, c], labels == c) for c in present]))


def macro_auc(model: Classifier, theta: np.ndarray, data: Dataset) -> float:
    _nonempty(data)
    return macro_auc_from_scores(softmax(model.forward(theta, data.features)), data.labels)


@dataclass(frozen=True)
class EvalReport:
    acc_clean: float
    auc_clean: float
    acc_corrupted: float
    auc_corrupted: float
    acc_avg: float
    auc_avg: float
    per_client_acc: tuple[float, ...]
    per_client_auc: tuple[float, ...]
    client_std_acc: float
    client_std_auc: float


def evaluate(
    model: Classifier,
    theta: np.ndarray,
    clean: Dataset,
    corrupted: Dataset,
    qualities: list[str],
    adj: LogitAdjustment | None = None,
) -> EvalReport:
    """Score the global model on both test sets.

    Each client is credited with the metrics of the test set that matches its
    quality tag; ``client_std_*`` is the population std over clients.
    """
    acc_c, auc_c = accuracy(model, theta, clean, adj), macro_auc(model, theta, clean)
    acc_x, auc_x = accuracy(model, theta, corrupted, adj), macro_auc(model, theta, corrupted)
    lookup = {CLEAN: (acc_c, auc_c), CORRUPTED: (acc_x, auc_x)}
    try:
        per_client = [lookup[q] for q in qualities]
    except KeyError as exc:
        raise ConfigError(f"unknown quality tag {exc.args[0]!r}") from None
    accs = tuple(a for a, _ in per_client)
    aucs = tuple(u for _, u in per_client)
    return EvalReport(
        acc_c,
        auc_c,
        acc_x,
        auc_x,
        (acc_c + acc_x) / 2.0,
        (auc_c + auc_x) / 2.0,
        accs,
        aucs,
        statistics.pstdev(accs) if accs else 0.0,
        statistics.pstdev(aucs) if aucs else 0.0,
    )


def random_directions(size: int, rng: np.random.Generator, count: int = 2) -> np.ndarray:
    """``count`` orthonormal Gaussian directions, shape (count, size)."""
    if count > size:
        raise ConfigError(f"cannot draw {count} orthonormal directions in {size} dimensions")
    q, _ = np.linalg.qr(rng.standard_normal((size, count)))
    return q.T.copy()


def grid_coords(radius: float, steps: int) -> np.ndarray:
    """Symmetric grid with an exact 0 at its centre; ``steps`` must be odd."""
    if steps < 1 or steps % 2 == 0:
        raise ConfigError(f"steps must be a positive odd integer, got {steps}")
    half = steps // 2
    if half == 0:
        return np.zeros(1)
    return radius * (np.arange(-half, half + 1) / half)


def landscape_slice(
    model: Classifier,
    theta: np.ndarray,
    data: Dataset,
    directions: np.ndarray,
    radius: float,
    steps: int,
    adj: LogitAdjustment | None = None,
) -> np.ndarray:
    """Loss at ``theta + a*d1 + b*d2`` for a, b on a symmetric grid.

    Row index follows the first direction, column index the second.
    """
    d1, d2 = np.asarray(directions, dtype=np.float64)
    coords = grid_coords(radius, steps)
    out = np.empty((coords.size, coords.size))
    for i, a in enumerate(coords):
        for j, b in enumerate(coords):
            point = theta if a == 0 and b == 0 else theta + a * d1 + b * d2
            out[i, j] = model.loss(point, data.features, data.labels, adj)
    return out
