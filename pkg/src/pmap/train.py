"""Training, evaluation and ablation runs."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import AdamState, adam_step
from .checkpoint import Checkpoint, to_storage
from .config import ModelConfig
from .data import Batch, read_dataset, stack
from .errors import ConfigError, TrainingError
from .model import AlignmentModel, cross_entropy
from .numeric import Rng
from .tci import predict

log = logging.getLogger(__name__)

SHUFFLE_STREAM = 1000
EVAL_BATCH = 256


@dataclass
class Confusion:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise ConfigError("accuracy of an empty set is undefined")
        return (self.tp + self.tn) / self.total

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, pred: np.ndarray, y: np.ndarray) -> "Confusion":
        return cls(
            tp=int(((pred == 1) & (y == 1)).sum()),
            tn=int(((pred == 0) & (y == 0)).sum()),
            fp=int(((pred == 1) & (y == 0)).sum()),
            fn=int(((pred == 0) & (y == 1)).sum()),
        )


@dataclass
class MetricsReport:
    epochs: list[dict] = field(default_factory=list)
    test_accuracy: float | None = None
    confusion: Confusion | None = None
    best_epoch: int | None = None
    best_val_accuracy: float | None = None
    wall_seconds: float = 0.0
    variant: str = "full"

    def summary(self) -> dict:
        out = {
            "summary": True,
            "variant": self.variant,
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
            "test_accuracy": self.test_accuracy,
            "wall_seconds": round(self.wall_seconds, 3),
        }
        if self.confusion is not None:
            out.update(dataclasses.asdict(self.confusion))
        return out


@dataclass
class Splits:
    train: Batch
    val: Batch
    test: Batch | None = None


def load_splits(root: str | Path) -> Splits:
    root = Path(root)
    test = stack(read_dataset(root / "test")) if (root / "test").exists() else None
    return Splits(stack(read_dataset(root / "train")), stack(read_dataset(root / "val")), test)


def config_for_data(cfg: ModelConfig, data: Batch) -> ModelConfig:
    """Copy of ``cfg`` with the extents taken from the data."""
    if len(data) == 0:
        raise ConfigError("dataset is empty")
    return dataclasses.replace(
        cfg,
        traj_len=data.traj.shape[1],
        joints=data.traj.shape[2],
        d_txt=data.txt.shape[2],
        d_img=data.img.shape[2],
    ).validate()


def check_extents(cfg: ModelConfig, data: Batch) -> None:
    if len(data) == 0:
        raise ConfigError("dataset is empty")
    got = (data.traj.shape[1], data.traj.shape[2], data.txt.shape[2], data.img.shape[2])
    want = (cfg.traj_len, cfg.joints, cfg.d_txt, cfg.d_img)
    if got != want:
        raise ConfigError(f"dataset extents (T, J, d_txt, d_img) = {got} do not match checkpoint {want}")


def predict_proba(model: AlignmentModel, data: Batch, batch: int = EVAL_BATCH) -> np.ndarray:
    out = [model.predict_proba(data.traj[i:i + batch], data.txt[i:i + batch], data.img[i:i + batch])
           for i in range(0, len(data), batch)]
    return np.concatenate(out, axis=0)


def confusion(model: AlignmentModel, data: Batch, threshold: float = 0.5) -> Confusion:
    if len(data) == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    return Confusion.from_predictions(predict(predict_proba(model, data), threshold), data.labels)


def train_on(
    cfg: ModelConfig,
    splits: Splits,
    emit: Callable[[dict], None] | None = None,
) -> tuple[Checkpoint, MetricsReport]:
    """Train from scratch; keeps the best-validation epoch (epoch 0 = initialisation)."""
    cfg = config_for_data(cfg, splits.train)
    check_extents(cfg, splits.val)
    model = AlignmentModel(cfg)
    params = model.named_params()
    state = AdamState()
    n = len(splits.train)
    t0 = time.perf_counter()
    report = MetricsReport(variant=_variant_name(cfg))

    def snapshot():
        return {k: p.value.copy() for k, p in params.items()}

    best = snapshot()
    best_acc = confusion(model, splits.val, cfg.threshold).accuracy
    best_epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        order = Rng(cfg.seed, SHUFFLE_STREAM + epoch).permutation(n)
        total_loss = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = splits.train.take(order[start:start + cfg.batch_size])
            z, cache = model.logits(batch.traj, batch.txt, batch.img)
            loss, dz = cross_entropy(z, batch.labels)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {b}; {_worst_param(params)}")
            model.logits_backward(dz, cache)
            adam_step(params, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            total_loss += loss * len(batch)
            correct += int((np.argmax(z, axis=1) == batch.labels).sum())
        val_acc = confusion(model, splits.val, cfg.threshold).accuracy
        rec = {
            "epoch": epoch,
            "train_loss": total_loss / n,
            "train_accuracy": correct / n,
            "val_accuracy": val_acc,
            "elapsed": round(time.perf_counter() - t0, 3),
        }
        report.epochs.append(rec)
        if emit:
            emit(rec)
        log.info("epoch %d loss %.4f train %.3f val %.3f", epoch, rec["train_loss"], rec["train_accuracy"], val_acc)
        if val_acc > best_acc:
            best_acc, best_epoch, best = val_acc, epoch, snapshot()

    for k, p in params.items():
        p.value[...] = to_storage(best[k])
    report.best_epoch = best_epoch
    report.best_val_accuracy = confusion(model, splits.val, cfg.threshold).accuracy
    if splits.test is not None and len(splits.test):
        check_extents(cfg, splits.test)
        report.confusion = confusion(model, splits.test, cfg.threshold)
        report.test_accuracy = report.confusion.accuracy
    report.wall_seconds = time.perf_counter() - t0
    return Checkpoint.from_model(model), report


def _variant_name(cfg: ModelConfig) -> str:
    if cfg.mtf_variant != "full":
        return cfg.mtf_variant
    if cfg.no_tci_cross:
        return "no_tci_cross"
    return "full" if cfg.pairing_order == "iii" else f"order_{cfg.pairing_order}"


def _worst_param(params) -> str:
    bad = [k for k, p in params.items() if not (np.all(np.isfinite(p.value)) and np.all(np.isfinite(p.grad)))]
    if bad:
        return "non-finite parameters: " + ", ".join(bad[:5])
    name = max(params, key=lambda k: float(np.abs(params[k].value).max(initial=0.0)))
    return f"largest parameter {name} = {np.abs(params[name].value).max():.3g}"


def train(cfg: ModelConfig, data_root: str | Path, emit=None) -> tuple[Checkpoint, MetricsReport]:
    return train_on(cfg, load_splits(data_root), emit)


def model_from_checkpoint(ckpt: Checkpoint) -> AlignmentModel:
    model = AlignmentModel(ckpt.config)
    ckpt.load_into(model)
    return model


def evaluate(ckpt: Checkpoint, data: Batch | str | Path, threshold: float = 0.5) -> MetricsReport:
    """Accuracy and confusion counts; positive class = aligned."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("threshold must lie in [0, 1]")
    if not isinstance(data, Batch):
        data = stack(read_dataset(data))
    check_extents(ckpt.config, data)
    model = model_from_checkpoint(ckpt)
    conf = confusion(model, data, threshold)
    return MetricsReport(test_accuracy=conf.accuracy, confusion=conf, variant=_variant_name(ckpt.config))


def ablate(cfg: ModelConfig, variant: str, data: Splits | str | Path, emit=None) -> tuple[Checkpoint, MetricsReport]:
    splits = data if isinstance(data, Splits) else load_splits(data)
    return train_on(cfg.with_variant(variant), splits, emit)
