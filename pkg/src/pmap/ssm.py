"""Diagonal state-space layers: ZOH discretization, scan, kernel, convolution.

A single channel is ``h_k = a_bar * h_{k-1} + b_bar x_k``, ``y_k = c . h_k + d x_k``
with a real diagonal state matrix ``A = -exp(a_log)`` and step ``exp(delta_log)``.
The same output is available as a causal convolution with the impulse response
``taps[0] = c.b_bar + d``, ``taps[k] = c.(a_bar**k * b_bar)``.

Note the feedthrough ``d`` sits only on tap 0; putting it on every tap would
not reproduce the recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Module, Param
from .errors import DimensionError, ConfigError
from .numeric import DTYPE, Rng

TAYLOR_CUTOFF = 1e-8
MODES = ("scan", "conv", "fft")


@dataclass
class ContinuousSSM:
    a_log: np.ndarray  # (H,)
    b: np.ndarray  # (H, 1)
    c: np.ndarray  # (1, H)
    d: float
    delta_log: float

    @property
    def a(self) -> np.ndarray:
        return -np.exp(self.a_log)

    @property
    def delta(self) -> float:
        return float(np.exp(self.delta_log))


@dataclass
class DiscreteSSM:
    a_bar: np.ndarray  # (H,)
    b_bar: np.ndarray  # (H, 1)
    c: np.ndarray  # (1, H)
    d: float


def _phi(z: np.ndarray) -> np.ndarray:
    """(exp(z) - 1) / z with the second-order Taylor form near zero."""
    small = np.abs(z) < TAYLOR_CUTOFF
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0, np.expm1(safe) / safe)


def _phi_prime(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    exact = (safe * np.exp(safe) - np.expm1(safe)) / (safe * safe)
    series = 0.5 + z / 3.0 + z * z / 8.0 + z**3 / 30.0
    return np.where(small, series, exact)


def zoh_arrays(a_log, b, delta_log):
    """Vectorised ZOH.  ``a_log``, ``b`` are (..., H); ``delta_log`` is (...,)."""
    delta = np.exp(np.asarray(delta_log, dtype=DTYPE))[..., None]
    z = -np.exp(a_log) * delta
    a_bar = np.exp(z)
    b_bar = delta * _phi(z) * b
    return a_bar, b_bar


def discretize_zoh(ssm: ContinuousSSM) -> DiscreteSSM:
    a_bar, b_bar = zoh_arrays(np.asarray(ssm.a_log), np.asarray(ssm.b).reshape(-1), ssm.delta_log)
    return DiscreteSSM(a_bar=a_bar, b_bar=b_bar.reshape(-1, 1), c=np.asarray(ssm.c, DTYPE), d=float(ssm.d))


def ssm_scan(disc: DiscreteSSM, x: np.ndarray) -> np.ndarray:
    """Sequential recurrence from a zero initial state."""
    x = np.asarray(x, dtype=DTYPE)
    a = disc.a_bar
    b = disc.b_bar.reshape(-1)
    c = disc.c.reshape(-1)
    h = np.zeros_like(a)
    y = np.empty_like(x)
    for k in range(x.shape[0]):
        h = a * h + b * x[k]
        y[k] = c @ h + disc.d * x[k]
    return y


def kernel_taps(disc: DiscreteSSM, s: int) -> np.ndarray:
    if s < 1:
        raise DimensionError("kernel length must be >= 1")
    return _taps(disc.a_bar, disc.b_bar.reshape(-1), disc.c.reshape(-1), np.asarray(disc.d), s)


def _powers(a_bar: np.ndarray, s: int) -> np.ndarray:
    """a_bar**k for k = 0..s-1 along a new last axis, by repeated multiplication."""
    rep = np.broadcast_to(a_bar[..., None], a_bar.shape + (s,)).copy()
    rep[..., 0] = 1.0
    return np.cumprod(rep, axis=-1)


def _taps(a_bar, b_bar, c, d, s: int, powers=None) -> np.ndarray:
    if powers is None:
        powers = _powers(a_bar, s)
    taps = np.einsum("...h,...hk->...k", c * b_bar, powers)
    taps[..., 0] += d
    return taps


def causal_conv(x: np.ndarray, taps: np.ndarray, method: str = "direct") -> np.ndarray:
    """y_t = sum_{i<=t} taps[i] x[t-i] for one channel."""
    x = np.asarray(x, dtype=DTYPE)
    taps = np.asarray(taps, dtype=DTYPE)
    if x.shape != taps.shape or x.ndim != 1:
        raise DimensionError(f"kernel length {taps.shape} does not match input {x.shape}")
    s = x.shape[0]
    if method == "direct":
        y = np.zeros(s)
        for t in range(s):
            # taps[0..t] against x[t..0], summed left to right
            y[t] = np.dot(taps[: t + 1], x[t::-1])
        return y
    if method == "fft":
        return _fft_conv(x[None, :, None], taps[None, :])[0, :, 0]
    raise ConfigError(f"unknown convolution method {method!r}")


def _fft_len(s: int) -> int:
    n = 1
    while n < 2 * s:
        n *= 2
    return n


def _fft_conv(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """x (..., S, C), taps (C, S) -> causal conv per channel."""
    s = x.shape[-2]
    n = _fft_len(s)
    xf = np.fft.rfft(x, n=n, axis=-2)
    kf = np.fft.rfft(taps.T, n=n, axis=0)
    return np.fft.irfft(xf * kf, n=n, axis=-2)[..., :s, :]


DIRECT_BATCH_LIMIT = 1 << 24


def _toeplitz(taps: np.ndarray) -> np.ndarray:
    """(C, S) taps -> (C, S, S) lower-triangular matrices T[c, t, s] = taps[c, t - s]."""
    s = taps.shape[-1]
    idx = np.arange(s)
    lag = idx[:, None] - idx[None, :]
    mask = lag >= 0
    return np.ascontiguousarray(np.where(mask, taps[:, np.where(mask, lag, 0)], 0.0))


def _toeplitz_conv(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Direct O(S^2) causal conv per channel; x (..., S, C)."""
    c, s = taps.shape
    if c * s * s <= DIRECT_BATCH_LIMIT:
        lead = x.shape[:-2]
        xc = np.ascontiguousarray(np.moveaxis(x, -1, 0)).reshape(c, -1, s)  # (C, B, S)
        y = np.matmul(xc, np.ascontiguousarray(np.swapaxes(_toeplitz(taps), -1, -2)))
        return np.moveaxis(y.reshape((c,) + lead + (s,)), 0, -1)
    y = np.empty_like(x)
    for ch in range(c):
        toe = _toeplitz(taps[ch:ch + 1])[0]
        y[..., ch] = x[..., ch] @ toe.T
    return y


def _diag_sums(g: np.ndarray) -> np.ndarray:
    """out[c, k] = sum_s g[c, s + k, s] for g of shape (C, 2S, S) whose lower half is zero."""
    c, s2, s = g.shape
    g = np.ascontiguousarray(g)
    st = g.strides
    view = np.lib.stride_tricks.as_strided(g, shape=(c, s, s), strides=(st[0], st[1], st[1] + st[2]),
                                           writeable=False)
    return view.sum(axis=-1)


def _conv_backward(du: np.ndarray, x: np.ndarray, taps: np.ndarray):
    """Gradients of y = causal_conv(x, taps) per channel: returns (dx, dtaps)."""
    c, s = taps.shape
    if c * s * s <= DIRECT_BATCH_LIMIT:
        lead = du.shape[:-2]
        duc = np.ascontiguousarray(np.moveaxis(du, -1, 0)).reshape(c, -1, s)
        xc = np.ascontiguousarray(np.moveaxis(x, -1, 0)).reshape(c, -1, s)
        dx = np.matmul(duc, _toeplitz(taps))
        g = np.zeros((c, 2 * s, s))
        g[:, :s, :] = np.matmul(np.ascontiguousarray(np.swapaxes(duc, -1, -2)), xc)
        dtaps = _diag_sums(g)
        return np.moveaxis(dx.reshape((c,) + lead + (s,)), 0, -1), dtaps
    n = _fft_len(s)
    duf = np.fft.rfft(du, n=n, axis=-2)
    xf = np.fft.rfft(x, n=n, axis=-2)
    kf = np.fft.rfft(taps.T, n=n, axis=0)
    dx = np.fft.irfft(duf * np.conj(kf), n=n, axis=-2)[..., :s, :]
    corr = np.fft.irfft(duf * np.conj(xf), n=n, axis=-2)[..., :s, :]
    return dx, corr.reshape(-1, s, corr.shape[-1]).sum(axis=0).T


def _scan_channels(a_bar, b_bar, c, d, x):
    """Batched recurrence; x (..., S, C), params (C, H)."""
    h = np.zeros(x.shape[:-2] + a_bar.shape)
    y = np.empty_like(x)
    for k in range(x.shape[-2]):
        xk = x[..., k, :]
        h = a_bar * h + b_bar * xk[..., None]
        y[..., k, :] = (h * c).sum(axis=-1) + d * xk
    return y


class ChannelBank(Module):
    """N_c independent diagonal SSMs (one per input column) plus a channel-mixing map.

    Equivalent to one block-diagonal system of state size H*N_c, but the lifted
    matrices are never built.
    """

    def __init__(self, n_channels: int, state_size: int, rng: Rng | None = None):
        h = state_size
        self.a_log = Param(np.tile(np.log(0.5 + np.arange(h)), (n_channels, 1)))
        if rng is None:
            self.b = Param(np.ones((n_channels, h)))
            self.c = Param(np.zeros((n_channels, h)))
            self.d = Param(np.zeros(n_channels))
            self.delta_log = Param(np.full(n_channels, np.log(1e-2)))
            self.mix_w = Param(np.eye(n_channels))
        else:
            self.b = Param(np.ones((n_channels, h)))
            self.c = Param(rng.normal((n_channels, h), 1.0 / np.sqrt(h)))
            self.d = Param(rng.normal(n_channels))
            self.delta_log = Param(rng.uniform(np.log(1e-3), np.log(1e-1), n_channels))
            self.mix_w = Param(rng.normal((n_channels, n_channels), 1.0 / np.sqrt(n_channels)))
        self.mix_b = Param(np.zeros(n_channels))

    @classmethod
    def from_channels(cls, channels: list[ContinuousSSM], mix_w, mix_b) -> "ChannelBank":
        bank = cls(len(channels), np.asarray(channels[0].a_log).shape[0])
        bank.a_log.value[...] = np.stack([ch.a_log for ch in channels])
        bank.b.value[...] = np.stack([np.reshape(ch.b, -1) for ch in channels])
        bank.c.value[...] = np.stack([np.reshape(ch.c, -1) for ch in channels])
        bank.d.value[...] = [ch.d for ch in channels]
        bank.delta_log.value[...] = [ch.delta_log for ch in channels]
        bank.mix_w.value[...] = mix_w
        bank.mix_b.value[...] = mix_b
        return bank

    @property
    def n_channels(self) -> int:
        return self.d.value.shape[0]

    @property
    def channels(self) -> list[ContinuousSSM]:
        return [
            ContinuousSSM(
                a_log=self.a_log.value[i].copy(),
                b=self.b.value[i][:, None].copy(),
                c=self.c.value[i][None, :].copy(),
                d=float(self.d.value[i]),
                delta_log=float(self.delta_log.value[i]),
            )
            for i in range(self.n_channels)
        ]

    def kernels(self, s: int) -> np.ndarray:
        """(N_c, s) impulse responses of the unmixed channels."""
        a_bar, b_bar = zoh_arrays(self.a_log.value, self.b.value, self.delta_log.value)
        return _taps(a_bar, b_bar, self.c.value, self.d.value, s)

    def forward(self, x: np.ndarray, mode: str = "conv"):
        if x.shape[-1] != self.n_channels:
            raise DimensionError(f"expected {self.n_channels} channels, got input {x.shape}")
        if mode not in MODES:
            raise ConfigError(f"unknown SSM mode {mode!r}")
        s = x.shape[-2]
        a_bar, b_bar = zoh_arrays(self.a_log.value, self.b.value, self.delta_log.value)
        powers = _powers(a_bar, s)
        if mode == "scan":
            u = _scan_channels(a_bar, b_bar, self.c.value, self.d.value, x)
        else:
            taps = _taps(a_bar, b_bar, self.c.value, self.d.value, s, powers)
            u = _fft_conv(x, taps) if mode == "fft" else _toeplitz_conv(x, taps)
        y = u @ self.mix_w.value.T + self.mix_b.value
        return y, (x, u, a_bar, b_bar, powers)

    def backward(self, dy: np.ndarray, cache):
        """Gradients through the convolution form (valid for every mode, since all agree)."""
        x, u, a_bar, b_bar, powers = cache
        s = x.shape[-2]
        c = self.c.value
        du = dy @ self.mix_w.value
        u2 = u.reshape(-1, u.shape[-1])
        self.mix_w.accumulate(dy.reshape(-1, dy.shape[-1]).T @ u2)
        self.mix_b.accumulate(dy.reshape(-1, dy.shape[-1]).sum(axis=0))

        taps = _taps(a_bar, b_bar, c, self.d.value, s, powers)
        dx, dtaps = _conv_backward(du, x, taps)

        self.d.accumulate(dtaps[:, 0])
        g_pw = np.einsum("ck,chk->ch", dtaps, powers)
        self.c.accumulate(g_pw * b_bar)
        g_bbar = g_pw * c
        k = np.arange(1, s, dtype=DTYPE)
        g_abar = np.einsum("ck,chk->ch", dtaps[:, 1:] * k, powers[..., :-1]) * c * b_bar

        delta = np.exp(self.delta_log.value)[:, None]
        z = -np.exp(self.a_log.value) * delta
        phi = _phi(z)
        dphi = _phi_prime(z)
        b = self.b.value
        # dz/da_log = dz/ddelta_log = z
        gz = g_abar * a_bar + g_bbar * delta * b * dphi
        self.a_log.accumulate(gz * z)
        self.delta_log.accumulate((gz * z + g_bbar * delta * phi * b).sum(axis=-1))
        self.b.accumulate(g_bbar * delta * phi)
        return dx


def multichannel_forward(bank: ChannelBank, x: np.ndarray, mode: str = "scan") -> np.ndarray:
    return bank.forward(np.asarray(x, dtype=DTYPE), mode)[0]


def lifted_system(bank: ChannelBank):
    """Materialise the block-diagonal (H*N_c)-state system.  Test oracle only."""
    nc = bank.n_channels
    h = bank.a_log.value.shape[1]
    a_bar, b_bar = zoh_arrays(bank.a_log.value, bank.b.value, bank.delta_log.value)
    A = np.zeros((h * nc, h * nc))
    B = np.zeros((h * nc, nc))
    C = np.zeros((nc, h * nc))
    D = np.diag(bank.d.value)
    for j in range(nc):
        sl = slice(j * h, (j + 1) * h)
        A[sl, sl] = np.diag(a_bar[j])
        B[sl, j] = b_bar[j]
        C[j, sl] = bank.c.value[j]
    return A, B, C, D
