"""Multi-head cross-attention and pre-norm transformer encoder/decoder layers.

No masks anywhere: every sequence is fully visible.
"""

from __future__ import annotations

import numpy as np

from .autodiff import LayerNorm, Linear, Module, Param
from .errors import ConfigError, DimensionError
from .numeric import Rng, gelu_grad, gelu_with_tanh, softmax_rows, softmax_rows_backward

FFN_EXPANSION = 4


class AttentionWeights(Module):
    def __init__(self, d_in: int, d_out: int, head_count: int = 4, rng: Rng | None = None):
        if head_count < 1 or d_out % head_count != 0:
            raise ConfigError(f"head_count {head_count} must divide d_out {d_out}")
        self.head_count = head_count
        shape = (d_in, d_out)
        if rng is None:
            self.w_q = Param(np.zeros(shape))
            self.w_k = Param(np.zeros(shape))
            self.w_v = Param(np.zeros(shape))
        else:
            s = 1.0 / np.sqrt(d_in)
            self.w_q = Param(rng.normal(shape, s))
            self.w_k = Param(rng.normal(shape, s))
            self.w_v = Param(rng.normal(shape, s))

    @property
    def d_in(self) -> int:
        return self.w_q.value.shape[0]

    @property
    def d_out(self) -> int:
        return self.w_q.value.shape[1]

    @property
    def d_k(self) -> int:
        return self.d_out // self.head_count

    def _split(self, t: np.ndarray) -> np.ndarray:
        # (..., n, d_out) -> (..., heads, n, d_k)
        *lead, n, _ = t.shape
        return np.swapaxes(t.reshape(*lead, n, self.head_count, self.d_k), -2, -3)

    def _merge(self, t: np.ndarray) -> np.ndarray:
        t = np.swapaxes(t, -2, -3)
        return t.reshape(*t.shape[:-2], self.d_out)

    def forward(self, xa: np.ndarray, xb: np.ndarray):
        if xa.shape[-1] != self.d_in or xb.shape[-1] != self.d_in:
            raise DimensionError(f"attention expects width {self.d_in}, got {xa.shape} and {xb.shape}")
        q = self._split(xa @ self.w_q.value)
        k = self._split(xb @ self.w_k.value)
        v = self._split(xb @ self.w_v.value)
        scale = 1.0 / np.sqrt(self.d_k)
        probs = softmax_rows(q @ np.swapaxes(k, -1, -2) * scale)
        out = self._merge(probs @ v)
        return out, (xa, xb, q, k, v, probs)

    def backward(self, dout: np.ndarray, cache):
        xa, xb, q, k, v, probs = cache
        scale = 1.0 / np.sqrt(self.d_k)
        do = self._split(dout)
        dprobs = do @ np.swapaxes(v, -1, -2)
        dv = np.swapaxes(probs, -1, -2) @ do
        dlogits = softmax_rows_backward(probs, dprobs) * scale
        dq = self._merge(dlogits @ k)
        dk = self._merge(np.swapaxes(dlogits, -1, -2) @ q)
        dv = self._merge(dv)

        xa2 = xa.reshape(-1, xa.shape[-1])
        xb2 = xb.reshape(-1, xb.shape[-1])
        self.w_q.accumulate(xa2.T @ dq.reshape(-1, self.d_out))
        self.w_k.accumulate(xb2.T @ dk.reshape(-1, self.d_out))
        self.w_v.accumulate(xb2.T @ dv.reshape(-1, self.d_out))
        dxa = dq @ self.w_q.value.T
        dxb = dk @ self.w_k.value.T + dv @ self.w_v.value.T
        return dxa, dxb


def cross_attention(xa: np.ndarray, xb: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """softmax((xa Wq)(xb Wk)^T / sqrt(d_k)) (xb Wv), per head, heads concatenated."""
    return w.forward(np.asarray(xa, float), np.asarray(xb, float))[0]


def attention_probs(xa: np.ndarray, xb: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """The (heads, p, q) attention weights, for inspection."""
    return w.forward(np.asarray(xa, float), np.asarray(xb, float))[1][-1]


class FeedForward(Module):
    def __init__(self, width: int, rng: Rng | None = None):
        self.fc1 = Linear(width, FFN_EXPANSION * width, rng)
        self.fc2 = Linear(FFN_EXPANSION * width, width, rng)

    def forward(self, x):
        h, c1 = self.fc1.forward(x)
        a, t = gelu_with_tanh(h)
        y, c2 = self.fc2.forward(a)
        return y, (c1, h, t, c2)

    def backward(self, dy, cache):
        c1, h, t, c2 = cache
        da = self.fc2.backward(dy, c2)
        return self.fc1.backward(da * gelu_grad(h, t), c1)


class EncoderLayer(Module):
    """Pre-norm: t + Proj(SelfAttn(LN(t))), then + FFN(LN(.))."""

    def __init__(self, width: int, head_count: int = 4, rng: Rng | None = None):
        self.ln1 = LayerNorm(width)
        self.attn = AttentionWeights(width, width, head_count, rng)
        self.proj = Linear(width, width, rng)
        self.ln2 = LayerNorm(width)
        self.ffn = FeedForward(width, rng)

    def forward(self, t):
        n1, c_ln1 = self.ln1.forward(t)
        a, c_attn = self.attn.forward(n1, n1)
        p, c_proj = self.proj.forward(a)
        t1 = t + p
        n2, c_ln2 = self.ln2.forward(t1)
        f, c_ffn = self.ffn.forward(n2)
        return t1 + f, (c_ln1, c_attn, c_proj, c_ln2, c_ffn)

    def backward(self, dy, cache):
        c_ln1, c_attn, c_proj, c_ln2, c_ffn = cache
        dt1 = dy + self.ln2.backward(self.ffn.backward(dy, c_ffn), c_ln2)
        da = self.proj.backward(dt1, c_proj)
        dqa, dkb = self.attn.backward(da, c_attn)
        return dt1 + self.ln1.backward(dqa + dkb, c_ln1)


class DecoderLayer(Module):
    """Pre-norm self-attention, cross-attention to ``memory``, FFN; all residual.

    The memory gets its own LayerNorm, playing the part of the final encoder norm
    in a pre-norm encoder-decoder, so no modality dominates the keys by scale.
    """

    def __init__(self, width: int, head_count: int = 4, rng: Rng | None = None):
        self.ln1 = LayerNorm(width)
        self.self_attn = AttentionWeights(width, width, head_count, rng)
        self.self_proj = Linear(width, width, rng)
        self.ln2 = LayerNorm(width)
        self.ln_mem = LayerNorm(width)
        self.cross_attn = AttentionWeights(width, width, head_count, rng)
        self.cross_proj = Linear(width, width, rng)
        self.ln3 = LayerNorm(width)
        self.ffn = FeedForward(width, rng)

    def forward(self, queries, memory):
        if memory.shape[-1] != queries.shape[-1]:
            raise DimensionError(f"memory width {memory.shape} != query width {queries.shape}")
        n1, c_ln1 = self.ln1.forward(queries)
        a, c_sa = self.self_attn.forward(n1, n1)
        p, c_sp = self.self_proj.forward(a)
        t1 = queries + p
        n2, c_ln2 = self.ln2.forward(t1)
        nm, c_lnm = self.ln_mem.forward(memory)
        ca, c_ca = self.cross_attn.forward(n2, nm)
        cp, c_cp = self.cross_proj.forward(ca)
        t2 = t1 + cp
        n3, c_ln3 = self.ln3.forward(t2)
        f, c_ffn = self.ffn.forward(n3)
        return t2 + f, (c_ln1, c_sa, c_sp, c_ln2, c_lnm, c_ca, c_cp, c_ln3, c_ffn)

    def backward(self, dy, cache):
        c_ln1, c_sa, c_sp, c_ln2, c_lnm, c_ca, c_cp, c_ln3, c_ffn = cache
        dt2 = dy + self.ln3.backward(self.ffn.backward(dy, c_ffn), c_ln3)
        dq2, dnm = self.cross_attn.backward(self.cross_proj.backward(dt2, c_cp), c_ca)
        dmem = self.ln_mem.backward(dnm, c_lnm)
        dt1 = dt2 + self.ln2.backward(dq2, c_ln2)
        dqa, dkb = self.self_attn.backward(self.self_proj.backward(dt1, c_sp), c_sa)
        return dt1 + self.ln1.backward(dqa + dkb, c_ln1), dmem


class DecoderStack(Module):
    """``depth`` decoder layers sharing one memory."""

    def __init__(self, width: int, depth: int = 1, head_count: int = 4, rng: Rng | None = None):
        if depth < 1:
            raise ConfigError("decoder depth must be at least 1")
        self.layers = [DecoderLayer(width, head_count, rng) for _ in range(depth)]

    def forward(self, queries, memory):
        caches = []
        x = queries
        for layer in self.layers:
            x, c = layer.forward(x, memory)
            caches.append(c)
        return x, caches

    def backward(self, dy, caches):
        dmem = 0.0
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy, dm = layer.backward(dy, c)
            dmem = dmem + dm
        return dy, dmem


def encoder_layer_forward(tokens: np.ndarray, layer: EncoderLayer) -> np.ndarray:
    return layer.forward(np.asarray(tokens, float))[0]


def decoder_layer_forward(queries: np.ndarray, memory: np.ndarray, layer: DecoderLayer) -> np.ndarray:
    return layer.forward(np.asarray(queries, float), np.asarray(memory, float))[0]
