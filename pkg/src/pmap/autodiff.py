"""Parameters, the layer contract, the finite-difference checker and Adam.

There is no tape.  Each layer exposes ``forward(*inputs) -> (out, cache)`` and
``backward(dout, cache) -> dinputs``; ``backward`` adds parameter gradients into
``Param.grad``.  Models compose these explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, TrainingError
from .numeric import DTYPE, layer_norm, layer_norm_backward


class Param:
    __slots__ = ("value", "grad", "name", "frozen")

    def __init__(self, value, name: str = ""):
        self.value = np.array(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.frozen = False

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise DimensionError(f"gradient shape {g.shape} != param {self.name} {self.value.shape}")
        self.grad += g

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


class Module:
    """Tree of parameters.  Attribute order fixes the dotted names."""

    def named_params(self, prefix: str = "") -> dict[str, Param]:
        out: dict[str, Param] = {}
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Param):
                val.name = path
                out[path] = val
            elif isinstance(val, Module):
                out.update(val.named_params(path + "."))
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.update(m.named_params(f"{path}.{i}."))
        return out

    def zero_grad(self) -> None:
        for p in self.named_params().values():
            p.grad[...] = 0.0


class Linear(Module):
    """y = x W + b over the last axis."""

    def __init__(self, d_in: int, d_out: int, rng=None, bias: bool = True, scale: float | None = None):
        if rng is None:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal((d_in, d_out), scale if scale is not None else 1.0 / np.sqrt(d_in))
        self.w = Param(w)
        self.b = Param(np.zeros(d_out)) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.w.value.shape[0]:
            raise DimensionError(f"linear expects width {self.w.value.shape[0]}, got {x.shape}")
        y = x @ self.w.value
        if self.b is not None:
            y = y + self.b.value
        return y, x

    def backward(self, dy, x):
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.w.accumulate(x2.T @ dy2)
        if self.b is not None:
            self.b.accumulate(dy2.sum(axis=0))
        return dy @ self.w.value.T


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.gain = Param(np.ones(width))
        self.bias = Param(np.zeros(width))
        self.eps = eps

    def forward(self, x):
        y, xhat, inv_std = layer_norm(x, self.gain.value, self.bias.value, self.eps)
        return y, (xhat, inv_std)

    def backward(self, dy, cache):
        xhat, inv_std = cache
        dx, dg, db = layer_norm_backward(dy, xhat, inv_std, self.gain.value)
        self.gain.accumulate(dg)
        self.bias.accumulate(db)
        return dx


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-3

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def failures(self) -> list[str]:
        return [k for k, v in self.errors.items() if v > self.tol]

    def merge(self, other: "GradCheckReport", prefix: str = "") -> None:
        for k, v in other.errors.items():
            self.errors[prefix + k] = max(v, self.errors.get(prefix + k, 0.0))


def _as_tuple(out) -> tuple:
    return out if isinstance(out, tuple) else (out,)


def _sq_loss(out) -> float:
    return float(sum(np.sum(o * o) for o in _as_tuple(out)))


def rel_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def grad_check(
    layer,
    inputs: Sequence[np.ndarray],
    eps: float = 1e-4,
    tol: float = 1e-3,
    params: dict[str, Param] | None = None,
    check_inputs: bool = True,
) -> GradCheckReport:
    """Compare ``layer.backward`` with central differences of sum(out**2).

    ``layer`` needs ``forward(*inputs) -> (out, cache)`` and
    ``backward(dout, cache) -> dinput or tuple of dinputs``.  Every parameter
    entry and every input entry is perturbed.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-6, 1e-3]")
    inputs = [np.array(x, dtype=DTYPE) for x in inputs]
    if params is None:
        params = layer.named_params() if hasattr(layer, "named_params") else {}
    for p in params.values():
        p.grad[...] = 0.0

    out, cache = layer.forward(*inputs)
    douts = tuple(2.0 * o for o in _as_tuple(out))
    dins = layer.backward(douts if isinstance(out, tuple) else douts[0], cache)
    dins = _as_tuple(dins)

    def f() -> float:
        return _sq_loss(layer.forward(*inputs)[0])

    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        analytic = p.grad.copy()
        numeric = _numeric_grad(f, p.value, eps)
        report.errors[name] = _compare(name, analytic, numeric)
    if check_inputs:
        for i, x in enumerate(inputs):
            if i >= len(dins) or dins[i] is None:
                continue
            numeric = _numeric_grad(f, x, eps)
            report.errors[f"input[{i}]"] = _compare(f"input[{i}]", dins[i], numeric)
    return report


def _numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def _compare(name: str, analytic: np.ndarray, numeric: np.ndarray) -> float:
    if not np.all(np.isfinite(analytic)):
        raise NumericError(f"non-finite analytic gradient for {name}")
    if not np.all(np.isfinite(numeric)):
        raise NumericError(f"non-finite numeric gradient for {name}")
    if analytic.size == 0:
        return 0.0
    return float(rel_error(analytic, numeric).max())


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Param],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam update in place; gradients are zeroed afterwards."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if not (0 < beta1 < 1 and 0 < beta2 < 1):
        raise ValueError("betas must lie in (0, 1)")
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter {name}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        if p.frozen:
            p.grad[...] = 0.0
            continue
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if lr > 0:
            p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.grad[...] = 0.0
    return state
