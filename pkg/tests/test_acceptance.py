"""End-to-end acceptance checks.  Each test reports one PASS/FAIL line.

The training criteria (4 and 5) share one desk-scale dataset and one trained
full model; they take several minutes on one CPU core.
"""

import time

import numpy as np
import pytest

from pmap.bench import LENGTHS, bench
from pmap.checkpoint import Checkpoint
from pmap.config import DESK_SPLIT, desk_profile, small_profile
from pmap.data import GeneratorConfig, generate, read_dataset, stack, write_dataset
from pmap.gradcheck import gradcheck_all
from pmap.numeric import Rng
from pmap.probe import trajectory_probe
from pmap.ssm import (
    MODES,
    ChannelBank,
    ContinuousSSM,
    causal_conv,
    discretize_zoh,
    kernel_taps,
    lifted_system,
    multichannel_forward,
    ssm_scan,
)
from pmap.train import Splits, ablate, evaluate, train_on

pytestmark = pytest.mark.slow


def test_1_scan_conv_equivalence(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        r = Rng(2024, i)
        h, s = int(r.integers(1, 17)), int(r.integers(1, 257))
        ssm = ContinuousSSM(r.uniform(-3, 2, h), r.normal((h, 1)), r.normal((1, h)), float(r.normal()),
                            float(r.uniform(np.log(1e-3), np.log(1.0))))
        disc = discretize_zoh(ssm)
        x = r.normal(s)
        worst = max(worst, float(np.abs(ssm_scan(disc, x) - causal_conv(x, kernel_taps(disc, s))).max()))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-9 and secs < 10
    criterion(1, "scan == conv on 100 random SSMs", ok, f"max diff {worst:.2e}, {secs:.2f} s")
    assert ok


def test_2_block_diagonal_equivalence(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for nc in (2, 3, 8):
        r = Rng(77, nc)
        bank = ChannelBank(nc, 16, r)
        x = r.normal((64, nc))
        a, b, c, d = lifted_system(bank)
        h = np.zeros(a.shape[0])
        ref = np.empty_like(x)
        for k in range(64):
            h = a @ h + b @ x[k]
            ref[k] = c @ h + d @ x[k]
        ref = ref @ bank.mix_w.value.T + bank.mix_b.value
        for mode in MODES:
            worst = max(worst, float(np.abs(multichannel_forward(bank, x, mode) - ref).max()))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-9 and secs < 10
    criterion(2, "multichannel == lifted block-diagonal system", ok, f"max diff {worst:.2e}, {secs:.2f} s")
    assert ok


def test_3_gradient_suite(criterion):
    t0 = time.perf_counter()
    suite = gradcheck_all(small_profile(), seeds=(0, 1, 2), eps=1e-4, tol=1e-3)
    secs = time.perf_counter() - t0
    worst = max(r["worst"] for r in suite.rows())
    ok = suite.passed and secs < 120
    criterion(3, "grad_check on every layer and the model, 3 seeds", ok,
              f"{len(suite.groups)} groups, worst {worst:.2e}, {secs:.1f} s, failures {suite.failures()}")
    assert ok


# ---------------------------------------------------------------------------
# training criteria


@pytest.fixture(scope="module")
def desk_splits():
    g = GeneratorConfig(seed=0)
    n_train, n_val, n_test = DESK_SPLIT
    eps = generate(g, 0, n_train + n_val + n_test)
    return Splits(stack(eps[:n_train]), stack(eps[n_train:n_train + n_val]), stack(eps[n_train + n_val:]))


@pytest.fixture(scope="module")
def full_run(desk_splits):
    t0 = time.perf_counter()
    ckpt, rep = train_on(desk_profile(), desk_splits)
    return ckpt, rep, time.perf_counter() - t0


def test_4_synthetic_end_to_end(full_run, criterion):
    ckpt, rep, secs = full_run
    cfg = ckpt.config
    ok = rep.best_val_accuracy >= 0.90 and rep.test_accuracy >= 0.85 and cfg.epochs <= 30 and secs < 600
    criterion(4, "desk profile val >= 0.90, test >= 0.85, <= 30 epochs, < 10 min", ok,
              f"val {rep.best_val_accuracy:.3f} (epoch {rep.best_epoch}), test {rep.test_accuracy:.3f}, "
              f"{cfg.epochs} epochs, {secs:.0f} s")
    assert ok


def test_5_fusion_necessity(full_run, desk_splits, criterion):
    _, full, _ = full_run
    probe = trajectory_probe(desk_splits.train, desk_splits.test)
    cfg = desk_profile()
    _, fc = ablate(cfg, "fc_only", desk_splits)
    _, no_cross = ablate(cfg, "no_tci_cross", desk_splits)
    ok = (
        full.test_accuracy >= 0.85
        and probe.test_accuracy <= 0.60
        and fc.test_accuracy <= 0.60
        and no_cross.test_accuracy <= full.test_accuracy - 0.02
    )
    criterion(5, "trajectory probe and fc_only <= 0.60, no_tci_cross >= 2 points below full", ok,
              f"full {full.test_accuracy:.3f}, probe {probe.test_accuracy:.3f}, fc_only {fc.test_accuracy:.3f}, "
              f"no_tci_cross {no_cross.test_accuracy:.3f}")
    assert ok


# ---------------------------------------------------------------------------


def test_6_determinism_and_persistence(tmp_path, criterion):
    g = GeneratorConfig(slots=2, n_objects=3, traj_len=16, d_txt=6, d_img=6, seed=5)
    eps = generate(g, 0, 48)
    splits = Splits(stack(eps[:32]), stack(eps[32:40]), stack(eps[40:]))
    cfg = small_profile(chunk_len=4, epochs=2, batch_size=8, lr=3e-3)
    a, _ = train_on(cfg, splits)
    b, _ = train_on(cfg, splits)
    same_ckpt = a.to_bytes() == b.to_bytes()

    back = Checkpoint.load(a.save(tmp_path / "m.pmap"))
    same_eval = evaluate(a, splits.test).confusion == evaluate(back, splits.test).confusion

    write_dataset(eps, tmp_path / "d")
    same_data = read_dataset(tmp_path / "d") == eps
    ok = same_ckpt and same_eval and same_data
    criterion(6, "determinism and round trips", ok,
              f"checkpoints identical {same_ckpt}, evaluate unchanged {same_eval}, dataset identical {same_data}")
    assert ok


def test_7_benchmark(criterion):
    rows = bench(LENGTHS)
    ok = {r.length for r in rows} == set(LENGTHS) and all(r.max_abs_diff <= 1e-9 for r in rows)
    table = ", ".join(f"S={r.length} {r.mode} {r.steps_per_second:.0f}/s" for r in rows)
    criterion(7, "bench scan/conv/fft equality at 256, 1024, 4096", ok, table)
    assert ok
