"""Scan vs convolution throughput of the multichannel SSM layer."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CorrectnessError
from .numeric import Rng
from .ssm import MODES, ChannelBank, multichannel_forward

LENGTHS = (256, 1024, 4096)
EQUALITY_TOL = 1e-9


@dataclass
class BenchRow:
    length: int
    mode: str
    seconds: float
    steps_per_second: float
    max_abs_diff: float

    def as_dict(self) -> dict:
        return {
            "length": self.length,
            "mode": self.mode,
            "seconds": self.seconds,
            "steps_per_second": self.steps_per_second,
            "max_abs_diff": self.max_abs_diff,
        }


def bench(lengths=LENGTHS, channels: int = 4, state_size: int = 16, seed: int = 0,
          modes=MODES, repeats: int = 1) -> list[BenchRow]:
    """Time ``multichannel_forward`` per mode on identical inputs.

    Outputs of every mode are compared against the scan; a difference above
    1e-9 raises CorrectnessError.  Timings are informational only.
    """
    bad = [s for s in lengths if s not in LENGTHS]
    if bad:
        raise ConfigError(f"bench lengths must be drawn from {LENGTHS}, got {bad}")
    if "scan" not in modes:
        raise ConfigError("the scan mode is the reference and must be benchmarked")
    rows = []
    for s in lengths:
        rng = Rng(seed, s)
        bank = ChannelBank(channels, state_size, rng)
        x = rng.normal((1, s, channels))
        ref = None
        for mode in ["scan"] + [m for m in modes if m != "scan"]:
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                y = multichannel_forward(bank, x, mode)
                best = min(best, time.perf_counter() - t0)
            if ref is None:
                ref = y
            diff = float(np.abs(y - ref).max())
            if not diff <= EQUALITY_TOL:
                raise CorrectnessError(f"mode {mode} differs from scan by {diff:.3g} at S={s}")
            rows.append(BenchRow(s, mode, best, s / best, diff))
    return rows
