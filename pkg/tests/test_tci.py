import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmap.autodiff import grad_check
from pmap.errors import ConfigError, DimensionError
from pmap.numeric import Rng
from pmap.tci import ALIGNED, HALLUCINATED, PAIRINGS, TCI, predict, tci_forward

WIDTH, D_TXT, D_IMG = 8, 5, 6
T_C, S_TXT, S_IMG = 2, 3, 4


def inputs(seed=0, batch=(2,)):
    r = Rng(seed)
    return r.normal(batch + (T_C, WIDTH)), r.normal(batch + (S_TXT, D_TXT)), r.normal(batch + (S_IMG, D_IMG))


def make(order="iii", seed=0, cross=True, depth=1):
    return TCI(WIDTH, D_TXT, D_IMG, depth, 2, Rng(seed), order=order, cross=cross)


def test_zero_head_gives_half():
    tci = make()
    tci.head.w.value[...] = 0.0
    tci.head.b.value[...] = 0.0
    np.testing.assert_array_equal(tci_forward(*inputs(), tci), np.full((2, 2), 0.5))


@pytest.mark.parametrize("order", sorted(PAIRINGS))
def test_probabilities_on_simplex(order):
    p = tci_forward(*inputs(1, (5,)), make(order))
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(p > 0)


@pytest.mark.parametrize("order,n_out", [("i", T_C), ("ii", S_IMG), ("iii", S_TXT)])
def test_pairing_routes_modalities(order, n_out):
    # the second decoder's query modality fixes how many tokens reach the head
    tci = make(order)
    _, cache = tci.logits(*inputs())
    assert cache[-1] == n_out
    (q1, m1), q2 = PAIRINGS[order]
    assert {q1, m1, q2} == {"trj", "txt", "img"}


def test_unknown_order():
    with pytest.raises(ConfigError):
        make("iv")


def test_trajectory_width_checked():
    with pytest.raises(DimensionError):
        make().logits(np.zeros((2, 7)), np.zeros((3, D_TXT)), np.zeros((4, D_IMG)))


def test_predict_examples():
    assert predict(np.array([0.5, 0.5])) == ALIGNED
    assert predict(np.array([0.1, 0.9])) == ALIGNED
    assert predict(np.array([0.9, 0.1])) == HALLUCINATED
    assert predict(np.array([0.0, 1.0]), threshold=1.0) == ALIGNED
    assert predict(np.array([1e-9, 1 - 1e-9]), threshold=1.0) == HALLUCINATED


def test_predict_threshold_range():
    with pytest.raises(ConfigError):
        predict(np.array([0.5, 0.5]), threshold=1.01)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-1e3, 1e3))
def test_predict_invariant_to_logit_shift(a, b, c):
    from pmap.numeric import softmax_rows

    z = np.array([[a, b]])
    assert predict(softmax_rows(z)) == predict(softmax_rows(z + c))


def test_no_cross_passes_trajectory_tokens_to_second_decoder():
    tci = make(cross=False)
    assert all(p.frozen for p in tci.dec1.named_params().values())
    trj, txt, img = inputs(2)
    z, _ = tci.logits(trj, txt, img)
    # dec1 weights are irrelevant in this variant
    for p in tci.dec1.named_params().values():
        p.value[...] = 0.0
    np.testing.assert_array_equal(tci.logits(trj, txt, img)[0], z)


@pytest.mark.parametrize("order", sorted(PAIRINGS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradcheck_all_orders(order, seed):
    tci = make(order, seed)
    rep = grad_check(tci, list(inputs(seed + 5)))
    assert rep.passed, rep.failures()


def test_gradcheck_without_cross_and_deeper_stack():
    for tci in (make(cross=False), make(depth=2)):
        params = {k: p for k, p in tci.named_params().items() if not p.frozen}
        rep = grad_check(tci, list(inputs(3)), params=params)
        assert rep.passed, rep.failures()
