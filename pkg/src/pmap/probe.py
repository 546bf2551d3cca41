"""Trajectory-only logistic probe.

A linear classifier on the flattened trajectory, trained with full-batch Adam.
On generated data the label is independent of the trajectory alone, so the
probe should sit at chance; anything clearly above it means the generator
leaks the label into the trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import AdamState, Linear, adam_step
from .data import Batch
from .errors import ConfigError
from .model import cross_entropy
from .numeric import Rng


@dataclass
class ProbeResult:
    train_accuracy: float
    test_accuracy: float
    steps: int


def _features(traj: np.ndarray) -> np.ndarray:
    return traj.reshape(traj.shape[0], -1)


def trajectory_probe(train: Batch, test: Batch, steps: int = 300, lr: float = 1e-2, seed: int = 0) -> ProbeResult:
    if len(train) == 0 or len(test) == 0:
        raise ConfigError("probe needs non-empty train and test sets")
    x_tr, x_te = _features(train.traj), _features(test.traj)
    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0) + 1e-8
    x_tr, x_te = (x_tr - mu) / sd, (x_te - mu) / sd
    lin = Linear(x_tr.shape[1], 2, Rng(seed, 3))
    params = lin.named_params()
    state = AdamState()
    for _ in range(steps):
        z, cache = lin.forward(x_tr)
        _, dz = cross_entropy(z, train.labels)
        lin.backward(dz, cache)
        adam_step(params, state, lr)

    def acc(x, y):
        return float((np.argmax(lin.forward(x)[0], axis=1) == y).mean())

    return ProbeResult(acc(x_tr, train.labels), acc(x_te, test.labels), steps)
