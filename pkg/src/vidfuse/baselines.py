"""Order-agnostic reference classifier for the temporal experiments.

A linear softmax model on mean-pooled sequence features. Whatever signal
lives purely in frame order is invisible to it, which is exactly what the
recurrent models are measured against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .fusion import video_level_pool
from .linalg import RngStream, init_weights, softmax_rows


@dataclass
class PooledSoftmaxModel:
    w: np.ndarray  # num_classes x feature_dim
    b: np.ndarray


def train_pooled_softmax(dataset: Sequence[tuple[np.ndarray, int]], num_classes: int,
                         learning_rate: float = 0.5, epochs: int = 300,
                         seed: int = 0, weight_decay: float = 1e-4) -> PooledSoftmaxModel:
    """Full-batch gradient descent on the cross-entropy of pooled features."""
    if len(dataset) == 0:
        raise DataError("empty training set")
    x = np.stack([video_level_pool(seq) for seq, _ in dataset])
    labels = np.array([label for _, label in dataset], dtype=np.int64)
    n, dim = x.shape
    rng = RngStream(seed)
    w = init_weights(num_classes, dim, 0.01, rng)
    b = np.zeros(num_classes)
    targets = np.zeros((n, num_classes))
    targets[np.arange(n), labels] = 1.0
    for _ in range(epochs):
        probs = softmax_rows(x @ w.T + b)
        d_logits = (probs - targets) / n
        w -= learning_rate * (d_logits.T @ x + 2.0 * weight_decay * w)
        b -= learning_rate * d_logits.sum(axis=0)
    return PooledSoftmaxModel(w=w, b=b)


def predict_pooled_softmax(model: PooledSoftmaxModel, sequences: Sequence[np.ndarray]) -> np.ndarray:
    """Probability rows for each sequence's pooled features."""
    x = np.stack([video_level_pool(seq) for seq in sequences])
    return softmax_rows(x @ model.w.T + model.b)
