"""The assembled classifier: trajectory encoder, trimodal fusion, loss."""

from __future__ import annotations

import numpy as np

from .autodiff import Module
from .config import ModelConfig
from .mtf import MTF
from .numeric import Rng, softmax_rows, softmax_rows_backward
from .tci import TCI

INIT_STREAM = 1


class AlignmentModel(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng | None = None):
        cfg.validate()
        self.cfg = cfg
        if rng is None:
            rng = Rng(cfg.seed, INIT_STREAM)
        self.mtf = MTF(cfg.joints, cfg.traj_len, cfg.width, cfg.s4_blocks, cfg.enc_layers,
                       cfg.state_size, cfg.chunk_len, cfg.head_count, rng,
                       variant=cfg.mtf_variant, mode=cfg.ssm_mode)
        self.tci = TCI(cfg.width, cfg.d_txt, cfg.d_img, cfg.decoder_depth, cfg.head_count, rng,
                       order=cfg.pairing_order, cross=not cfg.no_tci_cross)

    def params(self):
        return self.named_params()

    def logits(self, traj, txt, img):
        (fused, *_), c_mtf = self.mtf.forward(traj)
        z, c_tci = self.tci.logits(fused, txt, img)
        return z, (c_mtf, c_tci)

    def logits_backward(self, dz, cache):
        c_mtf, c_tci = cache
        d_tok, d_txt, d_img = self.tci.logits_backward(dz, c_tci)
        d_traj = self.mtf.backward((d_tok,), c_mtf)
        return d_traj, d_txt, d_img

    def predict_proba(self, traj, txt, img) -> np.ndarray:
        return softmax_rows(self.logits(traj, txt, img)[0])

    # layer contract, so the whole model can be finite-difference checked
    def forward(self, traj, txt, img):
        z, cache = self.logits(traj, txt, img)
        p = softmax_rows(z)
        return p, (cache, p)

    def backward(self, dp, cache):
        cache, p = cache
        return self.logits_backward(softmax_rows_backward(p, dp), cache)


def cross_entropy(z: np.ndarray, y: np.ndarray):
    """Mean two-class cross-entropy on softmax(z); returns (loss, dL/dz)."""
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = z.shape[0]
    loss = -logp[np.arange(n), y].mean()
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    return float(loss), dz / n


def loss_and_grad(model: AlignmentModel, traj, txt, img, y) -> tuple[float, np.ndarray]:
    """Forward, loss, backward (accumulating into param grads).  Returns (loss, logits)."""
    z, cache = model.logits(traj, txt, img)
    loss, dz = cross_entropy(z, y)
    model.logits_backward(dz, cache)
    return loss, z
