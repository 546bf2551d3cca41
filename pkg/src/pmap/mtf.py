"""Multi-level trajectory encoder.

Two branches read the same (padded) trajectory:

* an S4 stack over every timestep, average-pooled inside each L-step window;
* a transformer encoder over L-step chunk tokens.

Their token sequences (one token per window, so both have T_c = ceil(T/L)
tokens) are fused by cross-attention with the S4 tokens as queries.  Fusion is
done per token rather than on the pooled vectors: attention over a single key
collapses to a copy of its value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionWeights, EncoderLayer
from .autodiff import LayerNorm, Linear, Module
from .errors import DimensionError
from .numeric import Rng, gelu_grad, gelu_with_tanh, sinusoidal_positions
from .ssm import ChannelBank


def n_chunks(t: int, l_len: int) -> int:
    return -(-t // l_len)


def pad_trajectory(x: np.ndarray, l_len: int) -> np.ndarray:
    """Repeat the final timestep until the length is a multiple of ``l_len``."""
    if l_len < 1:
        raise DimensionError("chunk length must be >= 1")
    t = x.shape[-2]
    if t < 1:
        raise DimensionError("empty trajectory")
    extra = n_chunks(t, l_len) * l_len - t
    if extra == 0:
        return x
    tail = np.repeat(x[..., -1:, :], extra, axis=-2)
    return np.concatenate([x, tail], axis=-2)


def chunk_trajectory(x: np.ndarray, l_len: int) -> np.ndarray:
    """(…, T, J) -> (…, T_c, L*J); each row is one flattened L x J window."""
    xp = pad_trajectory(np.asarray(x, dtype=float), l_len)
    *lead, t, j = xp.shape
    return xp.reshape(*lead, t // l_len, l_len * j)


def window_mean(u: np.ndarray, l_len: int) -> np.ndarray:
    *lead, t, d = u.shape
    return u.reshape(*lead, t // l_len, l_len, d).mean(axis=-2)


def window_mean_backward(d_tok: np.ndarray, l_len: int) -> np.ndarray:
    return np.repeat(d_tok / l_len, l_len, axis=-2)


class S4Block(Module):
    """x -> LN(x + gelu(bank(x)))"""

    def __init__(self, width: int, state_size: int, rng: Rng | None = None):
        self.bank = ChannelBank(width, state_size, rng)
        self.norm = LayerNorm(width)

    def forward(self, x, mode: str = "conv"):
        u, c_bank = self.bank.forward(x, mode)
        g, t = gelu_with_tanh(u)
        y, c_ln = self.norm.forward(x + g)
        return y, (c_bank, u, t, c_ln)

    def backward(self, dy, cache):
        c_bank, u, t, c_ln = cache
        dr = self.norm.backward(dy, c_ln)
        return dr + self.bank.backward(dr * gelu_grad(u, t), c_bank)


class S4Stack(Module):
    """Per-step J -> d' projection, N S4 blocks, window pooling and a pooled head.

    Input must already be padded to a multiple of ``l_len``.
    """

    def __init__(self, joints: int, width: int, n_blocks: int, state_size: int, l_len: int,
                 rng: Rng | None = None, mode: str = "conv"):
        self.inp = Linear(joints, width, rng)
        self.blocks = [S4Block(width, state_size, rng) for _ in range(n_blocks)]
        self.head = Linear(width, width, rng)
        self.l_len = l_len
        self.mode = mode

    def forward(self, xp):
        u, c_in = self.inp.forward(xp)
        caches = []
        for block in self.blocks:
            u, c = block.forward(u, self.mode)
            caches.append(c)
        tokens = window_mean(u, self.l_len)
        pooled = u.mean(axis=-2)
        h, c_head = self.head.forward(pooled)
        return (tokens, h), (c_in, caches, c_head, u.shape[-2])

    def backward(self, grads, cache):
        d_tokens, d_h = grads
        c_in, caches, c_head, t = cache
        du = window_mean_backward(d_tokens, self.l_len)
        if d_h is not None:
            dpool = self.head.backward(d_h, c_head)
            du = du + np.repeat(dpool[..., None, :] / t, t, axis=-2)
        for block, c in zip(reversed(self.blocks), reversed(caches)):
            du = block.backward(du, c)
        return self.inp.backward(du, c_in)


class ChunkEmbed(Module):
    """Flattened L x J windows -> d' tokens plus sinusoidal positions."""

    def __init__(self, joints: int, width: int, l_len: int, rng: Rng | None = None):
        self.proj = Linear(l_len * joints, width, rng)
        self.l_len = l_len

    def forward(self, xp):
        windows = chunk_trajectory(xp, self.l_len)
        tok, c = self.proj.forward(windows)
        return tok + sinusoidal_positions(tok.shape[-2], tok.shape[-1]), c

    def backward(self, dtok, cache):
        dwin = self.proj.backward(dtok, cache)
        return dwin.reshape(*dwin.shape[:-2], -1, dwin.shape[-1] // self.l_len)


class TrmEncoder(Module):
    """M encoder layers over chunk tokens; h_trm is the token mean."""

    def __init__(self, width: int, n_layers: int, head_count: int = 4, rng: Rng | None = None):
        self.layers = [EncoderLayer(width, head_count, rng) for _ in range(n_layers)]

    def forward(self, tokens):
        caches = []
        for layer in self.layers:
            tokens, c = layer.forward(tokens)
            caches.append(c)
        return (tokens, tokens.mean(axis=-2)), (caches, tokens.shape[-2])

    def backward(self, grads, cache):
        d_tokens, d_h = grads
        caches, n = cache
        if d_h is not None:
            d_tokens = d_tokens + d_h[..., None, :] / n
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            d_tokens = layer.backward(d_tokens, c)
        return d_tokens


class MtfFusion(Module):
    """fused = s4 + CrossAttn(s4, trm);  h_trj = Linear(mean(fused))."""

    def __init__(self, width: int, head_count: int = 4, rng: Rng | None = None):
        self.attn = AttentionWeights(width, width, head_count, rng)
        self.head = Linear(width, width, rng)

    def forward(self, tokens_s4, tokens_trm):
        if tokens_s4.shape != tokens_trm.shape:
            raise DimensionError(f"branch token shapes differ: {tokens_s4.shape} vs {tokens_trm.shape}")
        a, c_attn = self.attn.forward(tokens_s4, tokens_trm)
        fused = tokens_s4 + a
        h, c_head = self.head.forward(fused.mean(axis=-2))
        return (fused, h), (c_attn, c_head, fused.shape[-2])

    def backward(self, grads, cache):
        d_fused, d_h = grads
        c_attn, c_head, n = cache
        if d_h is not None:
            dpool = self.head.backward(d_h, c_head)
            d_fused = d_fused + dpool[..., None, :] / n
        ds4, dtrm = self.attn.backward(d_fused, c_attn)
        return d_fused + ds4, dtrm


@dataclass
class MtfState:
    tokens_s4: np.ndarray | None
    tokens_trm: np.ndarray | None
    h_s4: np.ndarray | None
    h_trm: np.ndarray | None
    h_trj: np.ndarray
    fused_tokens: np.ndarray


class MTF(Module):
    """The full trajectory encoder, with the branch ablations.

    ``variant`` is one of ``full``, ``no_s4``, ``no_trm``, ``fc_only``.  A disabled
    branch produces zeros, its parameters are frozen, and fusion passes the
    surviving branch through unchanged.  ``fc_only`` swaps both branches for one
    linear map of the flattened trajectory, yielding a single token.
    """

    def __init__(self, joints: int, traj_len: int, width: int, n_blocks: int, n_layers: int,
                 state_size: int, l_len: int, head_count: int = 4, rng: Rng | None = None,
                 variant: str = "full", mode: str = "conv"):
        self.l_len = l_len
        self.variant = variant
        self.s4 = S4Stack(joints, width, n_blocks, state_size, l_len, rng, mode)
        self.chunk = ChunkEmbed(joints, width, l_len, rng)
        self.trm = TrmEncoder(width, n_layers, head_count, rng)
        self.fuse = MtfFusion(width, head_count, rng)
        self.fc = None
        if variant == "fc_only":
            t_pad = n_chunks(traj_len, l_len) * l_len
            self.fc = Linear(t_pad * joints, width, rng)
        frozen = {
            "full": (),
            "no_s4": (self.s4, self.fuse.attn),
            "no_trm": (self.chunk, self.trm, self.fuse.attn),
            "fc_only": (self.s4, self.chunk, self.trm, self.fuse.attn),
        }[variant]
        for m in frozen:
            for p in m.named_params().values():
                p.frozen = True

    def forward(self, x):
        """x (…, T, J) -> ((fused_tokens, h_trj, h_s4, h_trm), cache)."""
        t = x.shape[-2]
        xp = pad_trajectory(x, self.l_len)
        if self.variant == "fc_only":
            tok, c_fc = self.fc.forward(xp.reshape(*xp.shape[:-2], -1))
            fused = tok[..., None, :]
            h_trj, c_fuse = self.fuse.head.forward(tok)
            zero = np.zeros_like(tok)
            return (fused, h_trj, zero, zero), ("fc", c_fc, c_fuse, xp.shape, t)

        c_s4 = c_chunk = c_trm = None
        if self.variant != "no_s4":
            (tokens_s4, h_s4), c_s4 = self.s4.forward(xp)
        if self.variant != "no_trm":
            tok, c_chunk = self.chunk.forward(xp)
            (tokens_trm, h_trm), c_trm = self.trm.forward(tok)
        if self.variant == "full":
            (fused, h_trj), c_fuse = self.fuse.forward(tokens_s4, tokens_trm)
        else:
            if self.variant == "no_s4":
                fused, h_s4 = tokens_trm, np.zeros_like(h_trm)
            else:
                fused, h_trm = tokens_s4, np.zeros_like(h_s4)
            # fusion bypassed; the pooled head still reads the surviving tokens
            h_trj, c_fuse = self.fuse.head.forward(fused.mean(axis=-2))
        cache = ("branches", c_s4, c_chunk, c_trm, c_fuse, xp.shape, t)
        return (fused, h_trj, h_s4, h_trm), cache

    def state(self, x) -> MtfState:
        xp = pad_trajectory(np.asarray(x, float), self.l_len)
        (fused, h_trj, h_s4, h_trm), _ = self.forward(xp)
        tokens_s4 = tokens_trm = None
        if self.variant in ("full", "no_trm"):
            tokens_s4 = self.s4.forward(xp)[0][0]
        if self.variant in ("full", "no_s4"):
            tokens_trm = self.trm.forward(self.chunk.forward(xp)[0])[0][0]
        return MtfState(tokens_s4, tokens_trm, h_s4, h_trm, h_trj, fused)

    def backward(self, grads, cache):
        d_fused, d_htrj, d_hs4, d_htrm = (list(grads) + [None] * 4)[:4]
        if cache[0] == "fc":
            _, c_fc, c_fuse, xp_shape, t = cache
            d_tok = d_fused[..., 0, :]
            if d_htrj is not None:
                d_tok = d_tok + self.fuse.head.backward(d_htrj, c_fuse)
            dflat = self.fc.backward(d_tok, c_fc)
            return _unpad(dflat.reshape(xp_shape), t)

        _, c_s4, c_chunk, c_trm, c_fuse, xp_shape, t = cache
        if self.variant == "full":
            d_s4tok, d_trmtok = self.fuse.backward((d_fused, d_htrj), c_fuse)
        else:
            d_pass = d_fused
            if d_htrj is not None:
                n = d_fused.shape[-2]
                d_pass = d_pass + self.fuse.head.backward(d_htrj, c_fuse)[..., None, :] / n
            d_s4tok = d_pass if self.variant == "no_trm" else None
            d_trmtok = d_pass if self.variant == "no_s4" else None
        dxp = np.zeros(xp_shape)
        if d_s4tok is not None:
            dxp = dxp + self.s4.backward((d_s4tok, d_hs4), c_s4)
        if d_trmtok is not None:
            dtok = self.trm.backward((d_trmtok, d_htrm), c_trm)
            dxp = dxp + self.chunk.backward(dtok, c_chunk)
        return _unpad(dxp, t)


def _unpad(dxp: np.ndarray, t: int) -> np.ndarray:
    # padding repeats the last real step, so its copies' gradients fold back onto it
    dx = dxp[..., :t, :].copy()
    if dxp.shape[-2] > t:
        dx[..., t - 1, :] += dxp[..., t:, :].sum(axis=-2)
    return dx
