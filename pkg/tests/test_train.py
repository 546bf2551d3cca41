import dataclasses

import numpy as np
import pytest

from pmap.checkpoint import Checkpoint
from pmap.config import ModelConfig, load_config, large_profile, small_profile
from pmap.data import GeneratorConfig, generate, stack, write_dataset
from pmap.errors import ConfigError, FormatError
from pmap.model import AlignmentModel, cross_entropy
from pmap.train import Confusion, Splits, ablate, confusion, evaluate, train, train_on

TINY_DATA = GeneratorConfig(slots=2, n_objects=3, traj_len=16, d_txt=6, d_img=6, seed=11)


def tiny_cfg(**kw):
    base = dict(chunk_len=4, epochs=2, batch_size=8, lr=3e-3)
    base.update(kw)
    return small_profile(**base)


@pytest.fixture(scope="module")
def splits():
    eps = generate(TINY_DATA, 0, 56)
    return Splits(stack(eps[:32]), stack(eps[32:44]), stack(eps[44:]))


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory, splits):
    root = tmp_path_factory.mktemp("tiny")
    eps = generate(TINY_DATA, 0, 56)
    for name, part in (("train", eps[:32]), ("val", eps[32:44]), ("test", eps[44:])):
        write_dataset(part, root / name)
    return root


def test_cross_entropy_hand_value():
    z = np.array([[0.0, 0.0], [np.log(3.0), 0.0]])
    loss, dz = cross_entropy(z, np.array([1, 0]))
    assert loss == pytest.approx((np.log(2.0) + np.log(4.0 / 3.0)) / 2)
    np.testing.assert_allclose(dz, [[0.25, -0.25], [-0.125, 0.125]])


def test_same_seed_same_checkpoint(splits):
    a, ra = train_on(tiny_cfg(), splits)
    b, rb = train_on(tiny_cfg(), splits)
    assert a.to_bytes() == b.to_bytes()
    assert [e["train_loss"] for e in ra.epochs] == [e["train_loss"] for e in rb.epochs]


def test_different_seed_differs(splits):
    a, _ = train_on(tiny_cfg(seed=1), splits)
    b, _ = train_on(tiny_cfg(seed=2), splits)
    assert a.to_bytes() != b.to_bytes()


def test_zero_lr_keeps_initialisation(splits):
    cfg = tiny_cfg(lr=0.0)
    ckpt, rep = train_on(cfg, splits)
    init = Checkpoint.from_model(AlignmentModel(dataclasses.replace(ckpt.config)))
    assert ckpt.to_bytes() == init.to_bytes()
    assert all(e["val_accuracy"] == rep.epochs[0]["val_accuracy"] for e in rep.epochs)


def test_report_invariants(splits):
    _, rep = train_on(tiny_cfg(), splits)
    c = rep.confusion
    assert c.total == len(splits.test)
    assert rep.test_accuracy == pytest.approx((c.tp + c.tn) / c.total)
    assert len(rep.epochs) == 2
    assert {"train_loss", "train_accuracy", "val_accuracy"} <= set(rep.epochs[0])


@pytest.mark.parametrize("variant", ["no_s4", "no_trm"])
def test_loss_decreases_on_ablated_encoders(splits, variant):
    cfg = tiny_cfg(epochs=10, lr=3e-3).with_variant(variant)
    from pmap.train import config_for_data

    cfg = config_for_data(cfg, splits.train)
    model = AlignmentModel(cfg)
    from pmap.autodiff import AdamState, adam_step

    st = AdamState()
    b = splits.train
    losses = []
    for _ in range(10):
        z, cache = model.logits(b.traj, b.txt, b.img)
        loss, dz = cross_entropy(z, b.labels)
        model.logits_backward(dz, cache)
        adam_step(model.named_params(), st, cfg.lr)
        losses.append(loss)
    assert losses[-1] < losses[0]


def test_frozen_branch_stays_frozen(splits):
    ckpt, _ = train_on(tiny_cfg(no_s4=True), splits)
    init = AlignmentModel(ckpt.config).named_params()
    for name, arr in ckpt.params.items():
        if name.startswith("mtf.s4."):
            np.testing.assert_array_equal(arr, np.float32(init[name].value))


def test_empty_training_set():
    empty = stack([])
    with pytest.raises(ConfigError):
        train_on(tiny_cfg(), Splits(empty, empty))


def test_confusion_empty_and_accuracy():
    with pytest.raises(ConfigError):
        Confusion().accuracy
    c = Confusion.from_predictions(np.array([1, 1, 0, 0, 1]), np.array([1, 0, 0, 1, 1]))
    assert (c.tp, c.tn, c.fp, c.fn) == (2, 1, 1, 1)
    assert c.accuracy == pytest.approx(0.6)


def test_threshold_one_marks_everything_hallucinated(splits):
    ckpt, _ = train_on(tiny_cfg(epochs=1), splits)
    rep = evaluate(ckpt, splits.test, threshold=1.0)
    assert rep.confusion.tp == rep.confusion.fp == 0
    with pytest.raises(ConfigError):
        evaluate(ckpt, splits.test, threshold=1.5)


def test_evaluate_extent_mismatch(splits):
    ckpt, _ = train_on(tiny_cfg(epochs=1), splits)
    other = stack(generate(dataclasses.replace(TINY_DATA, d_img=7), 0, 4))
    with pytest.raises(ConfigError, match="extents"):
        evaluate(ckpt, other)


def test_evaluate_does_not_mutate(splits):
    ckpt, _ = train_on(tiny_cfg(epochs=1), splits)
    before = ckpt.to_bytes()
    evaluate(ckpt, splits.val)
    assert ckpt.to_bytes() == before


def test_checkpoint_round_trip_keeps_evaluation(tmp_path, splits):
    ckpt, _ = train_on(tiny_cfg(), splits)
    path = ckpt.save(tmp_path / "m.pmap")
    back = Checkpoint.load(path)
    assert back == ckpt
    a, b = evaluate(ckpt, splits.test), evaluate(back, splits.test)
    assert a.confusion == b.confusion


def test_train_from_directory_and_ablate(data_dir):
    _, rep = train(tiny_cfg(epochs=1), data_dir)
    assert rep.test_accuracy is not None
    _, rep = ablate(tiny_cfg(epochs=1), "fc_only", data_dir)
    assert rep.variant == "fc_only"
    with pytest.raises(ConfigError):
        ablate(tiny_cfg(), "no_decoder", data_dir)


def test_order_iii_ablation_equals_default(splits):
    a, ra = train_on(tiny_cfg(epochs=1), splits)
    b, rb = ablate(tiny_cfg(epochs=1), "order_iii", splits)
    assert a.to_bytes() == b.to_bytes()
    assert ra.test_accuracy == rb.test_accuracy


def test_large_profile_values():
    cfg = large_profile()
    assert (cfg.enc_layers, cfg.s4_blocks, cfg.width, cfg.lr, cfg.batch_size, cfg.epochs) == (2, 4, 512, 1e-5, 64, 50)
    assert (cfg.beta1, cfg.beta2) == (0.9, 0.98)


def test_config_validation_and_loading(tmp_path):
    with pytest.raises(ConfigError):
        ModelConfig(decoder_depth=0).validate()
    with pytest.raises(ConfigError):
        ModelConfig(width=30, head_count=4).validate()
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"widht": 3})
    p = tmp_path / "c.json"
    p.write_text('{"width": 32, "epochs": 3}')
    cfg = load_config(p, seed=5)
    assert (cfg.width, cfg.epochs, cfg.seed) == (32, 3, 5)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_checkpoint_errors(tmp_path):
    ckpt = Checkpoint.from_model(AlignmentModel(small_profile()))
    buf = ckpt.to_bytes()
    with pytest.raises(FormatError, match="magic"):
        Checkpoint.from_bytes(b"X" + buf[1:])
    with pytest.raises(FormatError, match="truncated"):
        Checkpoint.from_bytes(buf[:-3])
    with pytest.raises(FormatError, match="trailing"):
        Checkpoint.from_bytes(buf + b"\0")
    with pytest.raises(ConfigError):
        ckpt.load_into(AlignmentModel(small_profile(width=16)))
