"""Dense float64 array primitives and the seeded random stream.

Matrices are plain 2-D ``numpy.ndarray`` objects in C (row-major) order with
dtype float64; vectors are 1-D float64 arrays. All training code in the
package draws randomness exclusively from :class:`RngStream` so runs are
bit-reproducible across platforms.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = [
    "RngStream",
    "matmul",
    "apply_sigmoid",
    "apply_tanh",
    "softmax_rows",
    "init_weights",
]

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 2.0 ** -53


class RngStream:
    """Counter-based pseudo-random stream (SplitMix64).

    The n-th raw value is ``mix64(seed + n * 0x9E3779B97F4A7C15)`` where
    ``mix64`` is the SplitMix64 finalizer (two xor-shift-multiply rounds and
    a final xor-shift), all in uint64 arithmetic. Because the output is a
    pure function of (seed, counter), the draw sequence is identical across
    runs and platforms, unlike platform-default generators. State is just
    the seed and how many values were consumed.
    """

    def __init__(self, seed: int):
        self._seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    @property
    def counter(self) -> int:
        return self._counter

    def _raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw uint64 values (vectorized SplitMix64)."""
        start = self._counter + 1
        idx = np.arange(start, start + n, dtype=np.uint64)
        self._counter += n
        z = (self._seed + idx * _GOLDEN) & _MASK64
        z = ((z ^ (z >> np.uint64(30))) * _MIX1) & _MASK64
        z = ((z ^ (z >> np.uint64(27))) * _MIX2) & _MASK64
        return z ^ (z >> np.uint64(31))

    def next_uint64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray | float:
        """Uniform draws in [low, high) using the top 53 bits of each raw value."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        out = low + (high - low) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def normal(self, size=None) -> np.ndarray | float:
        """Standard normal draws via Box-Muller on consecutive uniform pairs."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        raw = self._raw(2 * pairs)
        # u1 in (0, 1] so log() is finite; u2 in [0, 1)
        u1 = ((raw[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (raw[pairs:] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, bound: int, size=None) -> np.ndarray | int:
        """Integers in [0, bound) by modulo reduction (bias < 2^-40 for desk-scale bounds)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        n = 1 if size is None else int(np.prod(size))
        v = (self._raw(n) % np.uint64(bound)).astype(np.int64)
        if size is None:
            return int(v[0])
        return v.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n, dtype=np.int64)
        if n > 1:
            js = self._raw(n - 1)
            for i in range(n - 1, 0, -1):
                j = int(js[n - 1 - i] % np.uint64(i + 1))
                perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self, stream_index: int) -> "RngStream":
        """Independent child stream derived deterministically from this seed."""
        mixed = (self.seed ^ ((stream_index + 1) * 0xD1B54A32D192ED03)) & 0xFFFFFFFFFFFFFFFF
        return RngStream(RngStream(mixed).next_uint64())


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Raises ShapeError naming both shapes when a.cols != b.rows.
    """
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return a @ b


def apply_sigmoid(x: np.ndarray) -> np.ndarray:
    """Elementwise logistic function, overflow-safe for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_tanh(x: np.ndarray) -> np.ndarray:
    """Elementwise hyperbolic tangent."""
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    logits = _as_matrix(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def init_weights(rows: int, cols: int, scale: float, rng: RngStream) -> np.ndarray:
    """Weight matrix with entries uniform in [-scale, +scale], drawn from rng."""
    if scale < 0:
        raise ValueError("scale must be non-negative")
    return rng.uniform(low=-scale, high=scale, size=(rows, cols))
