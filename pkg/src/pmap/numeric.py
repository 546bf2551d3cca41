"""Dense float64 tensor primitives.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Every function
here is pure; the ones that take a trailing matrix also accept leading batch
axes so the model can run whole minibatches through a single call.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, NumericError

DTYPE = np.float64

# tanh-approximation constants for gelu
GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=DTYPE)
    check_finite(arr, name)
    return arr


def check_finite(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {name}")
    return x


class Rng:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Backed by Philox, so a given key produces the same draws on every platform,
    and different stream indices give independent sequences.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def child(self, stream: int) -> "Rng":
        """A new independent stream derived from this seed."""
        return Rng(self.seed, stream)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self.gen.normal(0.0, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def random(self, size=None):
        return self.gen.random(size)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the last two axes of ``a`` and ``b``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with per-row max subtraction."""
    if np.isnan(x).any():
        raise NumericError("NaN input to softmax")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the logits given the softmax output ``p``."""
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5):
    """Normalize each row to zero mean / unit variance, then apply ``gain`` and ``bias``.

    Returns ``(y, xhat, inv_std)``; the last two are what the backward pass needs.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.shape[-1] != gain.shape[-1] or x.shape[-1] != bias.shape[-1]:
        raise DimensionError(f"layer_norm width mismatch: {x.shape} vs {gain.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gain + bias, xhat, inv_std


def layer_norm_backward(dy: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, gain: np.ndarray):
    """Returns ``(dx, dgain, dbias)``; param grads are summed over all leading axes."""
    red = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=red)
    dbias = dy.sum(axis=red)
    dxhat = dy * gain
    n = dy.shape[-1]
    dx = inv_std / n * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def gelu(x: np.ndarray) -> np.ndarray:
    """0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))"""
    return gelu_with_tanh(x)[0]


def gelu_with_tanh(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """gelu(x) and the inner tanh, which gelu_grad can reuse."""
    t = np.tanh(GELU_C * x * (1.0 + GELU_K * x * x))
    return 0.5 * x * (1.0 + t), t


def gelu_grad(x: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
    x2 = x * x
    if t is None:
        t = np.tanh(GELU_C * x * (1.0 + GELU_K * x2))
    du = GELU_C * (1.0 + 3.0 * GELU_K * x2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def sinusoidal_positions(count: int, width: int) -> np.ndarray:
    """Interleaved sine/cosine table; even columns sine, odd columns cosine."""
    if width % 2 != 0:
        raise DimensionError(f"positional width must be even, got {width}")
    if count < 1 or width < 2:
        raise DimensionError(f"bad positional table size {count}x{width}")
    pos = np.arange(count, dtype=DTYPE)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, width, 2, dtype=DTYPE) / width)
    table = np.empty((count, width), dtype=DTYPE)
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table
