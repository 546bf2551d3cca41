import math

import numpy as np
import pytest

from pmap.attention import (
    AttentionWeights,
    DecoderLayer,
    DecoderStack,
    EncoderLayer,
    FeedForward,
    attention_probs,
    cross_attention,
    decoder_layer_forward,
    encoder_layer_forward,
)
from pmap.autodiff import grad_check
from pmap.errors import ConfigError, DimensionError
from pmap.numeric import Rng


def test_hand_computed_two_by_two():
    w = AttentionWeights(1, 1, head_count=1)
    w.w_q.value[...] = 1.0
    w.w_k.value[...] = 1.0
    w.w_v.value[...] = 2.0
    xa = np.array([[1.0], [0.0]])
    xb = np.array([[0.0], [math.log(3.0)]])
    # row 0: logits (0, ln 3) -> weights (1/4, 3/4); values (0, 2 ln 3)
    # row 1: logits (0, 0) -> weights (1/2, 1/2)
    out = cross_attention(xa, xb, w)
    np.testing.assert_allclose(out, [[1.5 * math.log(3.0)], [math.log(3.0)]], atol=1e-15)


def test_single_key_ignores_query_and_key_weights():
    r = Rng(0)
    w = AttentionWeights(4, 6, 2, r)
    xa, xb = r.normal((3, 4)), r.normal((1, 4))
    out = cross_attention(xa, xb, w)
    np.testing.assert_allclose(out, np.repeat(xb @ w.w_v.value, 3, axis=0), atol=1e-14)
    w.w_q.value[...] = r.normal((4, 6))
    w.w_k.value[...] = r.normal((4, 6))
    np.testing.assert_allclose(cross_attention(xa, xb, w), out, atol=1e-14)


def test_zero_query_weights_give_mean():
    r = Rng(1)
    w = AttentionWeights(4, 4, 2, r)
    w.w_q.value[...] = 0.0
    xa, xb = r.normal((2, 4)), r.normal((5, 4))
    want = (xb @ w.w_v.value).mean(axis=0)
    np.testing.assert_allclose(cross_attention(xa, xb, w), np.tile(want, (2, 1)), atol=1e-14)


def test_probabilities_sum_to_one_and_keys_permute():
    r = Rng(2)
    w = AttentionWeights(6, 6, 3, r)
    xa, xb = r.normal((4, 6)), r.normal((5, 6))
    p = attention_probs(xa, xb, w)
    assert p.shape == (3, 4, 5)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    perm = np.array([3, 0, 4, 1, 2])
    np.testing.assert_allclose(cross_attention(xa, xb[perm], w), cross_attention(xa, xb, w), atol=1e-13)


def test_large_logits_stay_finite():
    w = AttentionWeights(2, 2, 1)
    w.w_q.value[...] = np.eye(2)
    w.w_k.value[...] = np.eye(2)
    w.w_v.value[...] = np.eye(2)
    xa = np.array([[1000.0, 0.0]])
    xb = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = cross_attention(xa, xb, w)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-12)


def test_width_mismatch():
    w = AttentionWeights(4, 4, 2, Rng(0))
    with pytest.raises(DimensionError):
        cross_attention(np.zeros((2, 3)), np.zeros((2, 4)), w)


def test_head_count_must_divide():
    with pytest.raises(ConfigError):
        AttentionWeights(4, 6, 4)


def test_zero_weights_encoder_is_identity():
    layer = EncoderLayer(8, 2)  # no rng: all weights zero
    t = Rng(3).normal((5, 8))
    np.testing.assert_allclose(encoder_layer_forward(t, layer), t, atol=0)


def test_zero_weights_decoder_is_identity():
    layer = DecoderLayer(8, 2)
    q, m = Rng(4).normal((3, 8)), Rng(5).normal((6, 8))
    np.testing.assert_array_equal(decoder_layer_forward(q, m, layer), q)


def test_encoder_single_token_independent_of_qk():
    r = Rng(6)
    layer = EncoderLayer(8, 2, r)
    t = r.normal((1, 8))
    before = encoder_layer_forward(t, layer)
    layer.attn.w_q.value[...] = r.normal((8, 8))
    layer.attn.w_k.value[...] = r.normal((8, 8))
    np.testing.assert_allclose(encoder_layer_forward(t, layer), before, atol=1e-13)


def test_decoder_single_memory_token_independent_of_cross_qk():
    r = Rng(7)
    layer = DecoderLayer(8, 2, r)
    q, m = r.normal((3, 8)), r.normal((1, 8))
    before = decoder_layer_forward(q, m, layer)
    layer.cross_attn.w_q.value[...] = r.normal((8, 8))
    layer.cross_attn.w_k.value[...] = r.normal((8, 8))
    np.testing.assert_allclose(decoder_layer_forward(q, m, layer), before, atol=1e-13)


def test_decoder_memory_width_mismatch():
    layer = DecoderLayer(8, 2, Rng(0))
    with pytest.raises(DimensionError):
        decoder_layer_forward(np.zeros((2, 8)), np.zeros((2, 4)), layer)


def test_decoder_stack_depth_zero_is_config_error():
    with pytest.raises(ConfigError):
        DecoderStack(8, depth=0)


def test_output_shapes():
    r = Rng(8)
    assert encoder_layer_forward(r.normal((2, 5, 8)), EncoderLayer(8, 4, r)).shape == (2, 5, 8)
    assert decoder_layer_forward(r.normal((2, 3, 8)), r.normal((2, 7, 8)), DecoderLayer(8, 4, r)).shape == (2, 3, 8)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_layers_pass_gradcheck(seed):
    r = Rng(seed)
    cases = [
        (AttentionWeights(6, 4, 2, r), [r.normal((2, 3, 6)), r.normal((2, 4, 6))]),
        (FeedForward(4, r), [r.normal((2, 3, 4))]),
        (EncoderLayer(4, 2, r), [r.normal((2, 3, 4))]),
        (DecoderLayer(4, 2, r), [r.normal((2, 3, 4)), r.normal((2, 5, 4))]),
        (DecoderStack(4, 2, 2, r), [r.normal((2, 3, 4)), r.normal((2, 5, 4))]),
    ]
    for layer, inputs in cases:
        rep = grad_check(layer, inputs, eps=1e-4, tol=1e-3)
        assert rep.passed, (type(layer).__name__, rep.errors)
