"""Confusion-matrix contextual refinement.

The class-relationship operator is the row-stochastic confusion matrix of a
trained model on a held-out validation split: entry (i, j) is the fraction
of true-class-i validation samples whose argmax prediction was j. Refining
multiplies each score row by this matrix, so classes that the model tends
to confuse lend evidence to each other. On a perfectly classified
validation split the matrix is the identity and refinement leaves scores
bit-for-bit unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .scores import ScoreMatrix


@dataclass
class ConfusionMatrix:
    table: np.ndarray  # C x C, rows sum to 1
    class_count: int
    source: str = ""

    def __post_init__(self) -> None:
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.shape != (self.class_count, self.class_count):
            raise ShapeError(
                f"confusion table shape {self.table.shape} != ({self.class_count}, {self.class_count})")
        if np.any(self.table < -1e-12) or np.any(self.table > 1 + 1e-12):
            raise DataError("confusion entries must lie in [0, 1]")
        if not np.allclose(self.table.sum(axis=1), 1.0, atol=1e-9):
            raise DataError("confusion rows must sum to 1")


def _score_array(scores) -> np.ndarray:
    if isinstance(scores, ScoreMatrix):
        return scores.scores
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"scores must be 2-D, got shape {arr.shape}")
    return arr


def build_confusion_matrix(predictions, labels, num_classes: int,
                           source: str = "validation",
                           smoothing: float = 0.0) -> ConfusionMatrix:
    """Row-stochastic confusion matrix from validation predictions.

    Argmax ties break toward the lowest class index. Every class must
    appear among the labels (its row is a ratio over its sample count).
    Optional smoothing blends toward the identity:
    (1 - smoothing) * table + smoothing * I.
    """
    scores = _score_array(predictions)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape[0] != labels.shape[0]:
        raise ShapeError(f"{scores.shape[0]} score rows for {labels.shape[0]} labels")
    if scores.shape[1] != num_classes:
        raise ShapeError(f"score rows have {scores.shape[1]} classes, expected {num_classes}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels outside [0, {num_classes})")
    if not 0.0 <= smoothing <= 1.0:
        raise DataError("smoothing must lie in [0, 1]")

    counts = np.zeros((num_classes, num_classes))
    predicted = scores.argmax(axis=1)
    for true, pred in zip(labels, predicted):
        counts[true, pred] += 1.0
    totals = counts.sum(axis=1)
    missing = np.flatnonzero(totals == 0)
    if missing.size:
        raise DataError(
            f"class {int(missing[0])} has no validation samples; cannot build its confusion row")
    table = counts / totals[:, None]
    if smoothing > 0.0:
        table = (1.0 - smoothing) * table + smoothing * np.eye(num_classes)
    return ConfusionMatrix(table=table, class_count=num_classes, source=source)


def refine_scores(cm: ConfusionMatrix, scores, transpose: bool = False,
                  renormalize: bool = False):
    """Apply the class-relationship operator to every score row.

    Each refined row is the confusion matrix applied to the raw row as a
    column vector (optionally the transposed matrix). By default the result
    is not renormalized; mAP and argmax consume it as-is.
    """
    arr = _score_array(scores)
    if arr.shape[1] != cm.class_count:
        raise ShapeError(f"score rows have {arr.shape[1]} classes, matrix expects {cm.class_count}")
    op = cm.table.T if transpose else cm.table
    refined = arr @ op.T
    if renormalize:
        sums = refined.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise DataError("cannot renormalize rows with non-positive sums")
        refined = refined / sums
    if isinstance(scores, ScoreMatrix):
        return ScoreMatrix(ids=list(scores.ids), scores=refined, kind=scores.kind,
                           class_hash=scores.class_hash)
    return refined
