"""Linear combination of prediction-score tables from different models.

Sources must be aligned (same sample ids in the same order, same class
count) and must carry probability rows; averaging raw logits is a different
operator and is refused. The default is the plain average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .scores import ScoreMatrix


@dataclass
class FusionWeights:
    """Non-negative per-source weights summing to one."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.shape[0] < 1:
            raise ShapeError("weights must be a non-empty vector")
        if np.any(self.weights < 0):
            raise DataError("weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise DataError(f"weights must sum to 1, got {float(self.weights.sum())!r}")

    @classmethod
    def uniform(cls, n: int) -> "FusionWeights":
        if n < 1:
            raise DataError("need at least one source")
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def normalized(cls, raw) -> "FusionWeights":
        raw = np.asarray(raw, dtype=np.float64)
        total = float(raw.sum())
        if np.any(raw < 0) or total <= 0:
            raise DataError("raw weights must be non-negative with a positive sum")
        return cls(raw / total)

    def __len__(self) -> int:
        return self.weights.shape[0]


def fuse_scores(sources: list[ScoreMatrix], weights: FusionWeights | None = None) -> ScoreMatrix:
    """Weighted elementwise average of aligned probability tables."""
    if len(sources) < 1:
        raise DataError("need at least one score source")
    if weights is None:
        weights = FusionWeights.uniform(len(sources))
    if len(weights) != len(sources):
        raise ShapeError(f"{len(weights)} weights for {len(sources)} sources")

    first = sources[0]
    for k, src in enumerate(sources):
        if src.kind != "probabilities":
            raise DataError(f"source {k} carries {src.kind!r}; score fusion requires probabilities")
        if src.num_classes != first.num_classes:
            raise ShapeError(
                f"source {k} has {src.num_classes} classes, expected {first.num_classes}")
        if len(src) != len(first):
            raise DataError(f"source {k} has {len(src)} samples, expected {len(first)}")
        for a, b in zip(first.ids, src.ids):
            if a != b:
                raise DataError(f"sample id mismatch between sources: {a!r} vs {b!r}")

    fused = np.zeros_like(first.scores)
    for w, src in zip(weights.weights, sources):
        fused += w * src.scores
    return ScoreMatrix(ids=list(first.ids), scores=fused, kind="probabilities",
                       class_hash=first.class_hash)
