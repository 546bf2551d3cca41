"""Finite-difference check of every layer type and of the composed model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .attention import AttentionWeights, DecoderLayer, DecoderStack, EncoderLayer, FeedForward
from .autodiff import GradCheckReport, LayerNorm, Linear, grad_check
from .config import ModelConfig, small_profile
from .errors import ConfigError
from .model import AlignmentModel
from .mtf import MTF, ChunkEmbed, MtfFusion, S4Block, S4Stack, TrmEncoder
from .numeric import Rng
from .ssm import ChannelBank
from .tci import TCI

SEEDS = (0, 1, 2)
BATCH = 2


@dataclass
class SuiteReport:
    groups: dict[str, GradCheckReport] = field(default_factory=dict)
    tol: float = 1e-3

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.groups.values())

    def failures(self) -> list[str]:
        return [f"{g}/{k}" for g, r in self.groups.items() for k in r.failures()]

    def rows(self) -> list[dict]:
        out = []
        for g, r in self.groups.items():
            worst_path = max(r.errors, key=r.errors.get) if r.errors else ""
            out.append({"group": g, "worst": r.worst, "worst_path": worst_path, "passed": r.passed})
        return out


class _Adapter:
    """Wraps a layer whose forward returns a tuple or takes a mode argument."""

    def __init__(self, layer, fwd: Callable, bwd: Callable):
        self.layer, self._fwd, self._bwd = layer, fwd, bwd

    def named_params(self, prefix: str = ""):
        return self.layer.named_params(prefix)

    def forward(self, *xs):
        return self._fwd(*xs)

    def backward(self, dout, cache):
        return self._bwd(dout, cache)


def _cases(cfg: ModelConfig, rng: Rng):
    """(group name, layer, inputs) for every layer type at the small sizes."""
    d, h, heads = cfg.width, cfg.state_size, cfg.head_count
    t, j, l_len = cfg.traj_len, cfg.joints, cfg.chunk_len
    n_tok = -(-t // l_len)
    tpad = n_tok * l_len

    def x(*shape):
        return rng.normal((BATCH,) + shape)

    yield "linear", Linear(5, 4, rng), [x(3, 5)]
    ln = LayerNorm(d)
    ln.gain.value[...] = rng.normal(d) + 1.0
    ln.bias.value[...] = rng.normal(d)
    yield "layer_norm", ln, [x(3, d)]
    for mode in ("scan", "conv", "fft"):
        bank = ChannelBank(3, h, rng)
        yield f"channel_bank[{mode}]", _Adapter(bank, lambda v, b=bank, m=mode: b.forward(v, m), bank.backward), [x(7, 3)]
    yield "s4_block", S4Block(d, h, rng), [x(tpad, d)]
    stack = S4Stack(j, d, cfg.s4_blocks, h, l_len, rng)
    yield "s4_stack", stack, [x(tpad, j)]
    yield "chunk_embed", ChunkEmbed(j, d, l_len, rng), [x(tpad, j)]
    yield "attention", AttentionWeights(d, d, heads, rng), [x(3, d), x(4, d)]
    yield "feed_forward", FeedForward(d, rng), [x(3, d)]
    yield "encoder_layer", EncoderLayer(d, heads, rng), [x(n_tok, d)]
    yield "trm_encoder", TrmEncoder(d, cfg.enc_layers, heads, rng), [x(n_tok, d)]
    yield "decoder_layer", DecoderLayer(d, heads, rng), [x(3, d), x(4, d)]
    yield "decoder_stack", DecoderStack(d, cfg.decoder_depth, heads, rng), [x(3, d), x(4, d)]
    yield "mtf_fusion", MtfFusion(d, heads, rng), [x(n_tok, d), x(n_tok, d)]
    for variant in ("full", "no_s4", "no_trm", "fc_only"):
        mtf = MTF(j, t, d, cfg.s4_blocks, cfg.enc_layers, h, l_len, heads, rng, variant, cfg.ssm_mode)
        yield f"mtf[{variant}]", mtf, [x(t, j)]
    for order in ("i", "ii", "iii"):
        tci = TCI(d, cfg.d_txt, cfg.d_img, cfg.decoder_depth, heads, rng, order=order)
        yield f"tci[{order}]", tci, [x(n_tok, d), x(3, cfg.d_txt), x(4, cfg.d_img)]
    model = AlignmentModel(cfg, rng)
    yield "model", model, [x(t, j), x(3, cfg.d_txt), x(4, cfg.d_img)]


def gradcheck_all(cfg: ModelConfig | None = None, seeds=SEEDS, eps: float = 1e-4, tol: float = 1e-3,
                  only: set[str] | None = None, emit=None) -> SuiteReport:
    """Run grad_check on every layer type and the full model for each seed.

    The per-group error is the worst over seeds and entries.  Frozen parameters
    are skipped since they receive no gradient by design.
    """
    cfg = small_profile() if cfg is None else cfg
    cfg.validate()
    if cfg.width > 32 or cfg.traj_len > 32:
        raise ConfigError("gradcheck_all needs a small config (width <= 32, traj_len <= 32)")
    suite = SuiteReport(tol=tol)
    for seed in seeds:
        cfg_s = dataclasses.replace(cfg, seed=seed)
        for name, layer, inputs in _cases(cfg_s, Rng(seed, 7)):
            if only is not None and name not in only:
                continue
            params = {k: p for k, p in layer.named_params().items() if not p.frozen}
            rep = grad_check(layer, inputs, eps=eps, tol=tol, params=params)
            suite.groups.setdefault(name, GradCheckReport(tol=tol)).merge(rep)
            if emit:
                emit({"group": name, "seed": seed, "worst": rep.worst, "passed": rep.passed})
    return suite
