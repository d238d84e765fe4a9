"""Stacked LSTM sequence classifier with exact BPTT gradients.

One stack handles one feature stream (spatial or motion). Per-step class
probabilities come from a softmax head on the top layer's hidden state; the
video-level prediction is the last step's row. Training minimizes the
cross-entropy against the video label averaged over the time steps of each
sequence and over the batch, with momentum SGD and global-norm gradient
clipping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DataError, NumericalError, ShapeError
from .linalg import RngStream, apply_sigmoid, apply_tanh, init_weights, softmax_rows

GATE_NAMES = (
    "w_xi", "w_xf", "w_xc", "w_xo",
    "w_hi", "w_hf", "w_hc", "w_ho",
    "w_ci", "w_cf", "w_co",
    "b_i", "b_f", "b_c", "b_o",
)


@dataclass
class LstmLayerParams:
    """Parameters of one recurrent layer.

    Input-to-gate matrices are hidden_dim x input_dim, hidden-to-gate are
    hidden_dim x hidden_dim, and the cell-to-gate (peephole) weights are
    per-unit vectors of length hidden_dim.
    """

    w_xi: np.ndarray
    w_xf: np.ndarray
    w_xc: np.ndarray
    w_xo: np.ndarray
    w_hi: np.ndarray
    w_hf: np.ndarray
    w_hc: np.ndarray
    w_ho: np.ndarray
    w_ci: np.ndarray
    w_cf: np.ndarray
    w_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w_xi.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_xi.shape[0]

    def arrays(self) -> tuple:
        return tuple(getattr(self, name) for name in GATE_NAMES)


@dataclass
class LstmState:
    """Recurrent state: hidden activation and memory cell per layer."""

    h: list[np.ndarray]
    c: list[np.ndarray]


@dataclass
class LstmStack:
    """Stacked recurrent layers plus the softmax classification head."""

    layers: list[LstmLayerParams]
    w_head: np.ndarray  # num_classes x top hidden_dim
    b_head: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def num_classes(self) -> int:
        return self.w_head.shape[0]

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return tuple(layer.hidden_dim for layer in self.layers)

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        """Flat (name, array) view in a fixed order; arrays are live views."""
        out = []
        for idx, layer in enumerate(self.layers):
            for name in GATE_NAMES:
                out.append((f"layers.{idx}.{name}", getattr(layer, name)))
        out.append(("head.w", self.w_head))
        out.append(("head.b", self.b_head))
        return out

    def copy(self) -> "LstmStack":
        layers = [LstmLayerParams(*(a.copy() for a in lyr.arrays())) for lyr in self.layers]
        return LstmStack(layers, self.w_head.copy(), self.b_head.copy())


@dataclass
class LstmTrainConfig:
    """Optimizer and model-shape settings for one stream.

    Defaults follow the full-scale regime (two layers of 1024/512 units,
    learning rate 1e-4, momentum 0.9, mini-batches of 10, 150K iterations);
    desk-scale callers override the sizes and iteration count.
    """

    learning_rate: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 10
    max_iterations: int = 150_000
    seed: int = 0
    gradient_clip: float = 5.0
    hidden_dims: tuple[int, ...] = (1024, 512)
    num_classes: int | None = None
    init_scale: float = 0.08
    forget_bias: float = 1.0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.max_iterations < 1:
            raise ValueError("batch_size and max_iterations must be >= 1")
        if not self.hidden_dims:
            raise ValueError("hidden_dims must name at least one layer")


@dataclass
class LstmTrainResult:
    stack: LstmStack
    loss_trace: list[float] = field(default_factory=list)


def init_lstm_layer(input_dim: int, hidden_dim: int, rng: RngStream,
                    scale: float = 0.08, forget_bias: float = 1.0) -> LstmLayerParams:
    """Uniform +-scale weights; forget-gate bias starts at ``forget_bias``
    so early memory survives, the other biases at zero."""
    mats = {}
    for name in ("w_xi", "w_xf", "w_xc", "w_xo"):
        mats[name] = init_weights(hidden_dim, input_dim, scale, rng)
    for name in ("w_hi", "w_hf", "w_hc", "w_ho"):
        mats[name] = init_weights(hidden_dim, hidden_dim, scale, rng)
    for name in ("w_ci", "w_cf", "w_co"):
        mats[name] = init_weights(1, hidden_dim, scale, rng)[0]
    mats["b_i"] = np.zeros(hidden_dim)
    mats["b_f"] = np.full(hidden_dim, float(forget_bias))
    mats["b_c"] = np.zeros(hidden_dim)
    mats["b_o"] = np.zeros(hidden_dim)
    return LstmLayerParams(**mats)


def init_lstm_stack(input_dim: int, hidden_dims: Sequence[int], num_classes: int,
                    rng: RngStream, scale: float = 0.08,
                    forget_bias: float = 1.0) -> LstmStack:
    layers = []
    prev = input_dim
    for hidden in hidden_dims:
        layers.append(init_lstm_layer(prev, hidden, rng, scale, forget_bias))
        prev = hidden
    w_head = init_weights(num_classes, prev, scale, rng)
    b_head = np.zeros(num_classes)
    return LstmStack(layers, w_head, b_head)


def zero_lstm_stack(input_dim: int, hidden_dims: Sequence[int], num_classes: int) -> LstmStack:
    rng = RngStream(0)
    return init_lstm_stack(input_dim, hidden_dims, num_classes, rng, scale=0.0, forget_bias=0.0)


def lstm_cell_forward(params: LstmLayerParams, x_t: np.ndarray, h_prev: np.ndarray,
                      c_prev: np.ndarray):
    """Single-unit-of-time forward pass for one layer.

    Returns (h_t, c_t, gate_cache) where gate_cache holds the input/forget/
    output gate activations and the cell candidate.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    if x_t.shape != (params.input_dim,):
        raise ShapeError(f"input has shape {x_t.shape}, layer expects ({params.input_dim},)")
    if h_prev.shape != (params.hidden_dim,) or c_prev.shape != (params.hidden_dim,):
        raise ShapeError(
            f"state shapes {h_prev.shape}/{c_prev.shape} do not match hidden dim {params.hidden_dim}")
    i_t = apply_sigmoid(params.w_xi @ x_t + params.w_hi @ h_prev + params.w_ci * c_prev + params.b_i)
    f_t = apply_sigmoid(params.w_xf @ x_t + params.w_hf @ h_prev + params.w_cf * c_prev + params.b_f)
    g_t = apply_tanh(params.w_xc @ x_t + params.w_hc @ h_prev + params.b_c)
    c_t = f_t * c_prev + i_t * g_t
    o_t = apply_sigmoid(params.w_xo @ x_t + params.w_ho @ h_prev + params.w_co * c_t + params.b_o)
    h_t = o_t * apply_tanh(c_t)
    gate_cache = {"i": i_t, "f": f_t, "o": o_t, "candidate": g_t}
    return h_t, c_t, gate_cache


def _check_sequence(stack: LstmStack, seq: np.ndarray) -> np.ndarray:
    seq = np.ascontiguousarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise ShapeError(f"sequence must be 2-D (T x input_dim), got shape {seq.shape}")
    if seq.shape[0] < 1:
        raise DataError("empty sequence: at least one time step is required")
    if seq.shape[1] != stack.input_dim:
        raise ShapeError(f"sequence feature dim {seq.shape[1]} != stack input dim {stack.input_dim}")
    return seq


def _forward_with_cache(stack: LstmStack, seq: np.ndarray):
    """All-layer forward pass keeping per-layer activations for BPTT."""
    x = seq
    caches = []
    for layer in stack.layers:
        hidden, cells, gi, gf, go, cand = kernels.lstm_layer_forward(x, *layer.arrays())
        caches.append((x, hidden, cells, gi, gf, go, cand))
        x = hidden
    logits = x @ stack.w_head.T + stack.b_head
    return logits, caches


def lstm_sequence_forward(stack: LstmStack, seq: np.ndarray) -> np.ndarray:
    """Per-step class probabilities, shape T x num_classes."""
    seq = _check_sequence(stack, seq)
    logits, _ = _forward_with_cache(stack, seq)
    return softmax_rows(logits)


def predict_video(stack: LstmStack, seq: np.ndarray) -> np.ndarray:
    """Class scores for the whole sequence: the last step's probabilities,
    which have seen every previous step."""
    return lstm_sequence_forward(stack, seq)[-1]


def _sequence_loss(logits: np.ndarray, label: int) -> float:
    """Mean over steps of the softmax cross-entropy against the label."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[:, label]))


def lstm_gradients(stack: LstmStack, batch: Sequence[tuple[np.ndarray, int]]):
    """Exact loss and gradients over a batch of (sequence, label) pairs.

    The loss is the mean over the batch of each sequence's mean per-step
    cross-entropy. Returns (loss, grads) with grads keyed like
    ``named_parameters``.
    """
    if len(batch) == 0:
        raise DataError("empty batch")
    grads = {name: np.zeros_like(arr) for name, arr in stack.named_parameters()}
    batch_size = len(batch)
    total_loss = 0.0
    for seq, label in batch:
        seq = _check_sequence(stack, seq)
        label = int(label)
        if not 0 <= label < stack.num_classes:
            raise DataError(f"label {label} outside [0, {stack.num_classes})")
        logits, caches = _forward_with_cache(stack, seq)
        total_loss += _sequence_loss(logits, label)

        steps = seq.shape[0]
        probs = softmax_rows(logits)
        d_logits = probs / (steps * batch_size)
        d_logits[:, label] -= 1.0 / (steps * batch_size)

        top_hidden = caches[-1][1]
        grads["head.w"] += d_logits.T @ top_hidden
        grads["head.b"] += d_logits.sum(axis=0)

        d_hidden = d_logits @ stack.w_head
        for idx in range(len(stack.layers) - 1, -1, -1):
            layer = stack.layers[idx]
            x, hidden, cells, gi, gf, go, cand = caches[idx]
            out = kernels.lstm_layer_backward(
                x, hidden, cells, gi, gf, go, cand, d_hidden,
                layer.w_xi, layer.w_xf, layer.w_xc, layer.w_xo,
                layer.w_hi, layer.w_hf, layer.w_hc, layer.w_ho,
                layer.w_ci, layer.w_cf, layer.w_co,
            )
            for name, g in zip(GATE_NAMES, out[:15]):
                grads[f"layers.{idx}.{name}"] += g
            d_hidden = out[15]
    return total_loss / batch_size, grads


def clip_gradients(grads: dict[str, np.ndarray], threshold: float) -> float:
    """Scale all gradients in place so their global l2 norm is <= threshold.

    Returns the pre-clip norm.
    """
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = total ** 0.5
    if threshold > 0 and norm > threshold:
        scale = threshold / norm
        for g in grads.values():
            g *= scale
    return norm


def train_lstm(config: LstmTrainConfig, dataset: Sequence[tuple[np.ndarray, int]]) -> LstmTrainResult:
    """Momentum SGD over mini-batches with BPTT gradients.

    Deterministic for a given config: initialization, batch order and every
    update draw from one seeded stream. Raises NumericalError if the loss
    goes non-finite.
    """
    config.validate()
    if len(dataset) == 0:
        raise DataError("empty training set")
    input_dim = int(np.asarray(dataset[0][0]).shape[1])
    for seq, _ in dataset:
        if np.asarray(seq).shape[1] != input_dim:
            raise DataError(
                f"inconsistent feature dims in training set: {np.asarray(seq).shape[1]} vs {input_dim}")
    num_classes = config.num_classes
    if num_classes is None:
        num_classes = int(max(label for _, label in dataset)) + 1

    rng = RngStream(config.seed)
    stack = init_lstm_stack(input_dim, config.hidden_dims, num_classes, rng,
                            scale=config.init_scale, forget_bias=config.forget_bias)
    velocity = {name: np.zeros_like(arr) for name, arr in stack.named_parameters()}
    params = dict(stack.named_parameters())

    trace: list[float] = []
    iteration = 0
    n = len(dataset)
    batch_size = min(config.batch_size, n)
    while iteration < config.max_iterations:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            if iteration >= config.max_iterations:
                break
            batch = [dataset[i] for i in order[start:start + batch_size]]
            loss, grads = lstm_gradients(stack, batch)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at iteration {iteration}")
            clip_gradients(grads, config.gradient_clip)
            for name, p in params.items():
                v = velocity[name]
                v *= config.momentum
                v += grads[name]
                p -= config.learning_rate * v
            trace.append(loss)
            iteration += 1
    return LstmTrainResult(stack=stack, loss_trace=trace)


def score_sequences(stack: LstmStack, sequences: Sequence[np.ndarray]) -> np.ndarray:
    """Video-level probabilities for a list of sequences, shape N x C."""
    return np.stack([predict_video(stack, seq) for seq in sequences])
