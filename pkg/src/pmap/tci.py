"""Trimodal cross-integration: two stacked decoders and a two-class head.

With the default pairing the trajectory tokens first attend to the image
tokens, then the instruction tokens attend to that result; the head reads the
mean of the final tokens.
"""

from __future__ import annotations

import numpy as np

from .attention import DecoderStack
from .autodiff import Linear, Module
from .errors import ConfigError, DimensionError
from .numeric import Rng, softmax_rows, softmax_rows_backward

# (query, memory) of the first decoder, and the query of the second decoder
PAIRINGS = {
    "i": (("txt", "img"), "trj"),
    "ii": (("trj", "txt"), "img"),
    "iii": (("trj", "img"), "txt"),
}

ALIGNED = 1
HALLUCINATED = 0


class TCI(Module):
    def __init__(self, width: int, d_txt: int, d_img: int, depth: int = 1, head_count: int = 4,
                 rng: Rng | None = None, order: str = "iii", cross: bool = True):
        if order not in PAIRINGS:
            raise ConfigError(f"unknown pairing order {order!r}; expected one of {sorted(PAIRINGS)}")
        self.order = order
        self.cross = cross
        self.txt_proj = Linear(d_txt, width, rng)
        self.img_proj = Linear(d_img, width, rng)
        self.dec1 = DecoderStack(width, depth, head_count, rng)
        self.dec2 = DecoderStack(width, depth, head_count, rng)
        self.head = Linear(width, 2, rng)
        if not cross:
            for p in self.dec1.named_params().values():
                p.frozen = True

    def logits(self, trj_tokens, txt, img):
        """Pre-softmax scores, (…, 2); index 1 is 'aligned'."""
        width = self.head.w.value.shape[0]
        if trj_tokens.shape[-1] != width:
            raise DimensionError(f"trajectory tokens have width {trj_tokens.shape[-1]}, expected {width}")
        h_txt, c_txt = self.txt_proj.forward(txt)
        h_img, c_img = self.img_proj.forward(img)
        feats = {"trj": trj_tokens, "txt": h_txt, "img": h_img}
        (q1, m1), q2 = PAIRINGS[self.order]
        c_dec1 = None
        if self.cross:
            h_it, c_dec1 = self.dec1.forward(feats[q1], feats[m1])
        else:
            h_it = feats[q1]
        h_itl, c_dec2 = self.dec2.forward(feats[q2], h_it)
        z, c_head = self.head.forward(h_itl.mean(axis=-2))
        return z, (c_txt, c_img, c_dec1, c_dec2, c_head, h_itl.shape[-2])

    def logits_backward(self, dz, cache):
        """Returns (d_trj_tokens, d_txt, d_img)."""
        c_txt, c_img, c_dec1, c_dec2, c_head, n = cache
        (q1, m1), q2 = PAIRINGS[self.order]
        grads = {"trj": 0.0, "txt": 0.0, "img": 0.0}
        dpool = self.head.backward(dz, c_head)
        d_itl = np.repeat(dpool[..., None, :] / n, n, axis=-2)
        dq2, d_it = self.dec2.backward(d_itl, c_dec2)
        grads[q2] = grads[q2] + dq2
        if self.cross:
            dq1, dm1 = self.dec1.backward(d_it, c_dec1)
            grads[q1] = grads[q1] + dq1
            grads[m1] = grads[m1] + dm1
        else:
            grads[q1] = grads[q1] + d_it
        d_txt = self.txt_proj.backward(_as_array(grads["txt"], c_txt, self.txt_proj), c_txt)
        d_img = self.img_proj.backward(_as_array(grads["img"], c_img, self.img_proj), c_img)
        return grads["trj"], d_txt, d_img

    def forward(self, trj_tokens, txt, img):
        z, cache = self.logits(trj_tokens, txt, img)
        p = softmax_rows(z)
        return p, (cache, p)

    def backward(self, dp, cache):
        cache, p = cache
        return self.logits_backward(softmax_rows_backward(p, dp), cache)


def _as_array(g, x, proj: Linear):
    # a modality that feeds nothing (ablated pairing) has a scalar zero gradient
    if isinstance(g, np.ndarray):
        return g
    return np.zeros(x.shape[:-1] + (proj.w.value.shape[1],))


def tci_forward(trj_tokens, txt, img, tci: TCI) -> np.ndarray:
    return tci.forward(np.asarray(trj_tokens, float), np.asarray(txt, float), np.asarray(img, float))[0]


def predict(p, threshold: float = 0.5):
    """1 (aligned) iff p(aligned) >= threshold; ties go to aligned."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold {threshold} outside [0, 1]")
    p = np.asarray(p, float)
    return (p[..., ALIGNED] >= threshold).astype(np.int64)
