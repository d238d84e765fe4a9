"""Classification accuracy and ranking metrics.

Accuracy follows the argmax with ties broken toward the lowest class index.
Average precision is the non-interpolated form: samples are sorted by
descending score with ties kept in original order, and AP is the mean of
precision@k over the positive hits. A class without positives has AP 0 and
is excluded from the mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError
from .scores import ScoreMatrix


def _scores_array(scores) -> np.ndarray:
    if isinstance(scores, ScoreMatrix):
        return scores.scores
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"scores must be 2-D, got shape {arr.shape}")
    return arr


def accuracy(scores, labels, num_classes: int | None = None):
    """(overall, per_class, mean_class) accuracies.

    ``per_class`` has one entry per class; classes without samples get NaN
    and are excluded from ``mean_class``.
    """
    arr = _scores_array(scores)
    labels = np.asarray(labels, dtype=np.int64)
    if arr.shape[0] != labels.shape[0]:
        raise ShapeError(f"{arr.shape[0]} score rows for {labels.shape[0]} labels")
    if arr.shape[0] == 0:
        raise DataError("cannot compute accuracy of an empty score matrix")
    if num_classes is None:
        num_classes = arr.shape[1]
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"labels outside [0, {num_classes})")

    predicted = arr.argmax(axis=1)
    correct = predicted == labels
    overall = float(correct.mean())
    per_class = np.full(num_classes, np.nan)
    for c in range(num_classes):
        mask = labels == c
        if mask.any():
            per_class[c] = float(correct[mask].mean())
    present = ~np.isnan(per_class)
    mean_class = float(per_class[present].mean())
    return overall, per_class, mean_class


def average_precision(class_scores, class_labels) -> float:
    """Non-interpolated AP of one class's ranking.

    Returns 0.0 when there are no positives.
    """
    scores = np.asarray(class_scores, dtype=np.float64)
    labels = np.asarray(class_labels)
    if scores.ndim != 1 or labels.ndim != 1:
        raise ShapeError("average_precision expects 1-D scores and labels")
    if scores.shape[0] != labels.shape[0]:
        raise ShapeError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    if scores.shape[0] == 0:
        raise DataError("average_precision needs at least one sample")
    positives = labels != 0
    n_pos = int(positives.sum())
    if n_pos == 0:
        return 0.0
    # stable sort on negated scores keeps ties in original order
    order = np.argsort(-scores, kind="stable")
    relevant = positives[order]
    hits = np.cumsum(relevant)
    ranks = np.arange(1, scores.shape[0] + 1)
    precision_at_hits = hits[relevant] / ranks[relevant]
    return float(precision_at_hits.sum() / n_pos)


def per_class_ap(scores, relevance) -> np.ndarray:
    """AP per class; relevance is the N x C binary ground-truth matrix."""
    arr = _scores_array(scores)
    rel = np.asarray(relevance)
    if rel.shape != arr.shape:
        raise ShapeError(f"relevance shape {rel.shape} != scores shape {arr.shape}")
    return np.array([average_precision(arr[:, c], rel[:, c]) for c in range(arr.shape[1])])


def mean_ap(scores, relevance) -> float:
    """Unweighted mean AP over the classes that have at least one positive."""
    rel = np.asarray(relevance)
    aps = per_class_ap(scores, rel)
    has_pos = rel.sum(axis=0) > 0
    if not has_pos.any():
        raise DataError("no class has a positive sample; mean AP undefined")
    return float(aps[has_pos].mean())


def one_hot_relevance(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes), dtype=np.int64)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


@dataclass
class EvalReport:
    """All evaluation numbers for one score table."""

    overall_accuracy: float
    per_class_accuracy: list[float | None]
    mean_class_accuracy: float
    per_class_ap: list[float]
    mean_ap: float
    sample_count: int
    class_count: int
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "mean_class_accuracy": self.mean_class_accuracy,
            "per_class_ap": self.per_class_ap,
            "mean_ap": self.mean_ap,
            "sample_count": self.sample_count,
            "class_count": self.class_count,
        }
        if self.extras:
            d["extras"] = self.extras
        return d

    def summary_lines(self, class_names: list[str] | None = None) -> list[str]:
        lines = [
            f"samples: {self.sample_count}  classes: {self.class_count}",
            f"overall accuracy:    {self.overall_accuracy:.4f}",
            f"mean class accuracy: {self.mean_class_accuracy:.4f}",
            f"mean AP:             {self.mean_ap:.4f}",
        ]
        for c in range(self.class_count):
            name = class_names[c] if class_names else f"class {c}"
            acc = self.per_class_accuracy[c]
            acc_s = "  n/a " if acc is None else f"{acc:.4f}"
            lines.append(f"  {name:<16} acc {acc_s}  ap {self.per_class_ap[c]:.4f}")
        return lines


def evaluate(scores, labels, num_classes: int | None = None) -> EvalReport:
    """Full report for single-label data: accuracy plus one-vs-rest mAP."""
    arr = _scores_array(scores)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = arr.shape[1]
    overall, per_class, mean_class = accuracy(arr, labels, num_classes)
    rel = one_hot_relevance(labels, num_classes)
    aps = per_class_ap(arr, rel)
    map_value = mean_ap(arr, rel)
    return EvalReport(
        overall_accuracy=overall,
        per_class_accuracy=[None if np.isnan(x) else float(x) for x in per_class],
        mean_class_accuracy=mean_class,
        per_class_ap=[float(x) for x in aps],
        mean_ap=map_value,
        sample_count=int(arr.shape[0]),
        class_count=int(num_classes),
    )
