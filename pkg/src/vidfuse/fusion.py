"""Feature fusion network with row-structured sparsity on the fusion layer.

Three branch layers lift the per-modality video-level descriptors into a
common width, their outputs are concatenated (spatial, motion, audio) and a
fusion layer maps the concatenation to the unified representation that a
softmax head classifies. Training is (full-batch by default) gradient
descent; after every update of the fusion weight matrix, a proximal step
applies the combined row-group / elementwise shrinkage, so whole rows of
the fusion layer — one weight per concatenated input dimension — are driven
exactly to zero as the group penalty grows while the elementwise penalty
keeps modality-specific entries selectable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, NumericalError, ShapeError
from .linalg import RngStream, apply_sigmoid, init_weights, softmax_rows

MODALITY_ORDER = ("spatial", "motion", "audio")


@dataclass
class VideoLevelFeatures:
    """One sample's pooled descriptors, one vector per modality."""

    spatial: np.ndarray
    motion: np.ndarray
    audio: np.ndarray


@dataclass
class PooledBatch:
    """Column-stacked video-level features plus integer labels."""

    spatial: np.ndarray  # N x d_s
    motion: np.ndarray   # N x d_m
    audio: np.ndarray    # N x d_a
    labels: np.ndarray   # N

    def __len__(self) -> int:
        return self.spatial.shape[0]

    def take(self, idx) -> "PooledBatch":
        return PooledBatch(self.spatial[idx], self.motion[idx], self.audio[idx], self.labels[idx])


@dataclass
class FusionNetParams:
    """All learnable arrays plus the block layout of the fusion layer.

    ``w_fuse`` has one column block per modality, in ``modality_order``;
    ``block_dims`` records the width of each block so the penalty's rows
    always span all modalities.
    """

    w_spatial: np.ndarray
    b_spatial: np.ndarray
    w_motion: np.ndarray
    b_motion: np.ndarray
    w_audio: np.ndarray
    b_audio: np.ndarray
    w_fuse: np.ndarray   # fused_units x (sum of branch output dims)
    b_fuse: np.ndarray
    w_head: np.ndarray   # num_classes x fused_units
    b_head: np.ndarray
    hidden: str = "relu"  # relu | sigmoid
    modality_order: tuple[str, ...] = MODALITY_ORDER

    @property
    def block_dims(self) -> tuple[int, int, int]:
        return (self.w_spatial.shape[0], self.w_motion.shape[0], self.w_audio.shape[0])

    @property
    def num_classes(self) -> int:
        return self.w_head.shape[0]

    @property
    def input_dims(self) -> tuple[int, int, int]:
        return (self.w_spatial.shape[1], self.w_motion.shape[1], self.w_audio.shape[1])

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("branch.spatial.w", self.w_spatial),
            ("branch.spatial.b", self.b_spatial),
            ("branch.motion.w", self.w_motion),
            ("branch.motion.b", self.b_motion),
            ("branch.audio.w", self.w_audio),
            ("branch.audio.b", self.b_audio),
            ("fuse.w", self.w_fuse),
            ("fuse.b", self.b_fuse),
            ("head.w", self.w_head),
            ("head.b", self.b_head),
        ]

    def weight_matrices(self) -> list[np.ndarray]:
        return [self.w_spatial, self.w_motion, self.w_audio, self.w_fuse, self.w_head]

    def copy(self) -> "FusionNetParams":
        return FusionNetParams(
            *(arr.copy() for arr in (
                self.w_spatial, self.b_spatial, self.w_motion, self.b_motion,
                self.w_audio, self.b_audio, self.w_fuse, self.b_fuse,
                self.w_head, self.b_head)),
            hidden=self.hidden, modality_order=self.modality_order)


@dataclass
class RegConfig:
    """Regularization and optimizer settings for the fusion network.

    lambda1 is the smooth weight decay on every weight matrix, lambda2 the
    row-group (l2,1) strength and lambda3 the elementwise (l1,1) strength on
    the fusion layer. The proximal thresholds are learning_rate * lambda2
    and learning_rate * lambda3.
    """

    lambda1: float = 3e-5
    lambda2: float = 0.0
    lambda3: float = 0.0
    learning_rate: float = 0.7
    epochs: int = 200
    batch_size: int | None = None  # None = full batch
    momentum: float = 0.0
    seed: int | None = 0
    hidden: str = "relu"
    loss: str = "squared"  # squared | cross_entropy
    hidden_units: int = 200
    fused_units: int = 200
    init_scale: float = 0.08
    num_classes: int | None = None

    def validate(self) -> None:
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("regularization strengths must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.hidden not in ("relu", "sigmoid"):
            raise ValueError(f"unknown hidden nonlinearity {self.hidden!r}")
        if self.loss not in ("squared", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class FusionTrainResult:
    params: FusionNetParams
    loss_trace: list[float] = field(default_factory=list)
    zero_rows_trace: list[int] = field(default_factory=list)


def video_level_pool(seq: np.ndarray) -> np.ndarray:
    """Video-level descriptor: the mean of the per-frame feature rows."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise ShapeError(f"sequence must be 2-D, got shape {seq.shape}")
    if seq.shape[0] < 1:
        raise DataError("cannot pool an empty sequence")
    return seq.mean(axis=0)


def pooled_batch(records) -> PooledBatch:
    """Video-level features for a list of records (see vidfuse.data)."""
    if len(records) == 0:
        raise DataError("no records to pool")
    spatial = np.stack([video_level_pool(r.spatial_seq) for r in records])
    motion = np.stack([video_level_pool(r.motion_seq) for r in records])
    audio = np.stack([np.asarray(r.audio_vec, dtype=np.float64) for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    return PooledBatch(spatial, motion, audio, labels)


def init_fusion_params(spatial_dim: int, motion_dim: int, audio_dim: int,
                       num_classes: int, rng: RngStream, hidden_units: int = 200,
                       fused_units: int = 200, init_scale: float = 0.08,
                       hidden: str = "relu") -> FusionNetParams:
    w_s = init_weights(hidden_units, spatial_dim, init_scale, rng)
    w_m = init_weights(hidden_units, motion_dim, init_scale, rng)
    w_a = init_weights(hidden_units, audio_dim, init_scale, rng)
    w_fuse = init_weights(fused_units, 3 * hidden_units, init_scale, rng)
    w_head = init_weights(num_classes, fused_units, init_scale, rng)
    return FusionNetParams(
        w_spatial=w_s, b_spatial=np.zeros(hidden_units),
        w_motion=w_m, b_motion=np.zeros(hidden_units),
        w_audio=w_a, b_audio=np.zeros(hidden_units),
        w_fuse=w_fuse, b_fuse=np.zeros(fused_units),
        w_head=w_head, b_head=np.zeros(num_classes),
        hidden=hidden)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return apply_sigmoid(z)
    raise ValueError(f"unknown hidden nonlinearity {kind!r}")


def _activate_grad(z: np.ndarray, activated: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return activated * (1.0 - activated)
    raise ValueError(f"unknown hidden nonlinearity {kind!r}")


def _forward_cached(params: FusionNetParams, batch: PooledBatch):
    dims = params.input_dims
    got = (batch.spatial.shape[1], batch.motion.shape[1], batch.audio.shape[1])
    if got != dims:
        raise ShapeError(f"feature dims {got} do not match network input dims {dims}")
    z_s = batch.spatial @ params.w_spatial.T + params.b_spatial
    z_m = batch.motion @ params.w_motion.T + params.b_motion
    z_a = batch.audio @ params.w_audio.T + params.b_audio
    h_s = _activate(z_s, params.hidden)
    h_m = _activate(z_m, params.hidden)
    h_a = _activate(z_a, params.hidden)
    concat = np.concatenate([h_s, h_m, h_a], axis=1)
    z_f = concat @ params.w_fuse.T + params.b_fuse
    h_f = _activate(z_f, params.hidden)
    logits = h_f @ params.w_head.T + params.b_head
    probs = softmax_rows(logits)
    return probs, (z_s, z_m, z_a, h_s, h_m, h_a, concat, z_f, h_f, logits)


def fusion_forward_batch(params: FusionNetParams, batch: PooledBatch) -> np.ndarray:
    """Class probabilities for every sample in the batch, shape N x C."""
    probs, _ = _forward_cached(params, batch)
    return probs


def fusion_forward(params: FusionNetParams, feats: VideoLevelFeatures) -> np.ndarray:
    """Class probabilities for a single sample."""
    batch = PooledBatch(
        np.asarray(feats.spatial, dtype=np.float64)[None, :],
        np.asarray(feats.motion, dtype=np.float64)[None, :],
        np.asarray(feats.audio, dtype=np.float64)[None, :],
        np.zeros(1, dtype=np.int64))
    return fusion_forward_batch(params, batch)[0]


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"labels outside [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def smooth_loss_and_gradients(params: FusionNetParams, batch: PooledBatch,
                              lambda1: float, loss: str = "squared"):
    """Smooth objective (data term + lambda1 * sum of squared Frobenius
    norms of the weight matrices) and its exact gradients.

    The data term is, per sample, the squared distance between the softmax
    output and the one-hot label (default) or the cross-entropy, averaged
    over the batch. Returns (loss_value, grads) keyed like
    ``named_parameters``.
    """
    n = len(batch)
    if n == 0:
        raise DataError("empty batch")
    probs, cache = _forward_cached(params, batch)
    z_s, z_m, z_a, h_s, h_m, h_a, concat, z_f, h_f, logits = cache
    targets = _one_hot(batch.labels, params.num_classes)

    if loss == "squared":
        diff = probs - targets
        data_loss = float((diff * diff).sum() / n)
        v = 2.0 * diff / n
        # softmax Jacobian: dz = p * (v - <v, p>)
        d_logits = probs * (v - (v * probs).sum(axis=1, keepdims=True))
    elif loss == "cross_entropy":
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        data_loss = float(np.mean(log_z - shifted[np.arange(n), batch.labels]))
        d_logits = (probs - targets) / n
    else:
        raise ValueError(f"unknown loss {loss!r}")

    penalty = sum(float((w * w).sum()) for w in params.weight_matrices())
    total = data_loss + lambda1 * penalty

    grads: dict[str, np.ndarray] = {}
    grads["head.w"] = d_logits.T @ h_f
    grads["head.b"] = d_logits.sum(axis=0)
    d_hf = d_logits @ params.w_head
    d_zf = d_hf * _activate_grad(z_f, h_f, params.hidden)
    grads["fuse.w"] = d_zf.T @ concat
    grads["fuse.b"] = d_zf.sum(axis=0)
    d_concat = d_zf @ params.w_fuse
    d_s, d_m, d_a = np.split(d_concat, np.cumsum(params.block_dims)[:-1], axis=1)
    for tag, (d_h, z, h, x, w_name) in {
        "spatial": (d_s, z_s, h_s, batch.spatial, "branch.spatial"),
        "motion": (d_m, z_m, h_m, batch.motion, "branch.motion"),
        "audio": (d_a, z_a, h_a, batch.audio, "branch.audio"),
    }.items():
        d_z = d_h * _activate_grad(z, h, params.hidden)
        grads[f"{w_name}.w"] = d_z.T @ x
        grads[f"{w_name}.b"] = d_z.sum(axis=0)

    for name, arr in params.named_parameters():
        if name.endswith(".w"):
            grads[name] += 2.0 * lambda1 * arr
    return total, grads


def l21_norm(w: np.ndarray) -> float:
    """Sum over rows of the row l2 norms."""
    w = np.asarray(w, dtype=np.float64)
    return float(np.sqrt((w * w).sum(axis=1)).sum())


def l11_norm(w: np.ndarray) -> float:
    """Sum of absolute entries."""
    return float(np.abs(np.asarray(w, dtype=np.float64)).sum())


def prox_l21_l11(v: np.ndarray, t2: float, t3: float) -> np.ndarray:
    """Closed-form proximal map of t2*||.||_{2,1} + t3*||.||_{1,1}.

    Minimizes 0.5*||v - w||_F^2 + t2*sum_r ||w_r||_2 + t3*sum|w| by
    elementwise soft-thresholding at t3 followed by row-group shrinkage:
    each row is scaled by max(0, 1 - t2/||row||_2), so rows whose
    soft-thresholded norm is at most t2 become exactly zero.
    """
    if t2 < 0 or t3 < 0:
        raise ValueError("thresholds must be non-negative")
    v = np.asarray(v, dtype=np.float64)
    if t2 == 0.0 and t3 == 0.0:
        return v.copy()
    u = np.sign(v) * np.maximum(np.abs(v) - t3, 0.0)
    norms = np.sqrt((u * u).sum(axis=1))
    factor = np.zeros_like(norms)
    alive = norms > t2
    factor[alive] = 1.0 - t2 / norms[alive]
    return factor[:, None] * u


def zero_row_count(w: np.ndarray) -> int:
    """Number of exactly-zero rows."""
    return int((np.abs(w).sum(axis=1) == 0.0).sum())


def train_fusion(config: RegConfig, dataset: PooledBatch) -> FusionTrainResult:
    """Proximal gradient training of the fusion network.

    Every update takes a gradient step on all layers (head first, then the
    fusion layer, then the branches) and immediately applies the proximal
    shrinkage to the fusion weight matrix with thresholds
    learning_rate*lambda2 and learning_rate*lambda3. With lambda2 = lambda3
    = 0 the proximal step is the identity and the loop is plain gradient
    descent. Emits the pre-update loss and the post-update zero-row count
    of the fusion matrix per step.
    """
    config.validate()
    if len(dataset) == 0:
        raise DataError("empty training set")
    num_classes = config.num_classes
    if num_classes is None:
        num_classes = int(dataset.labels.max()) + 1
    rng = RngStream(config.seed if config.seed is not None else 0)
    params = init_fusion_params(
        dataset.spatial.shape[1], dataset.motion.shape[1], dataset.audio.shape[1],
        num_classes, rng, hidden_units=config.hidden_units,
        fused_units=config.fused_units, init_scale=config.init_scale,
        hidden=config.hidden)

    named = dict(params.named_parameters())
    velocity = {name: np.zeros_like(arr) for name, arr in named.items()}
    # head -> fusion -> branches: top-down layer order for the update sweep
    update_order = [
        "head.w", "head.b", "fuse.w", "fuse.b",
        "branch.audio.w", "branch.audio.b",
        "branch.motion.w", "branch.motion.b",
        "branch.spatial.w", "branch.spatial.b",
    ]
    t2 = config.learning_rate * config.lambda2
    t3 = config.learning_rate * config.lambda3

    loss_trace: list[float] = []
    zero_rows_trace: list[int] = []
    n = len(dataset)

    def step(batch: PooledBatch, epoch: int) -> None:
        loss, grads = smooth_loss_and_gradients(params, batch, config.lambda1, config.loss)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite fusion loss at epoch {epoch}")
        for name in update_order:
            v = velocity[name]
            v *= config.momentum
            v += grads[name]
            named[name] -= config.learning_rate * v
            if name == "fuse.w":
                params.w_fuse[...] = prox_l21_l11(params.w_fuse, t2, t3)
        loss_trace.append(loss)
        zero_rows_trace.append(zero_row_count(params.w_fuse))

    for epoch in range(config.epochs):
        if config.batch_size is None or config.batch_size >= n:
            step(dataset, epoch)
        else:
            order = rng.permutation(n)
            for start in range(0, n, config.batch_size):
                step(dataset.take(order[start:start + config.batch_size]), epoch)
    return FusionTrainResult(params=params, loss_trace=loss_trace,
                             zero_rows_trace=zero_rows_trace)
