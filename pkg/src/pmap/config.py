"""Model / training configuration and the two named profiles."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# default episode counts for the train / val / test splits of the desk profile
DESK_SPLIT = (4000, 500, 500)

VARIANTS = ("full", "no_s4", "no_trm", "fc_only", "no_tci_cross", "order_i", "order_ii", "order_iii")


@dataclass
class ModelConfig:
    # architecture
    enc_layers: int = 2  # M
    s4_blocks: int = 4  # N
    width: int = 64  # d'
    chunk_len: int = 16  # L
    state_size: int = 16  # H
    head_count: int = 4
    decoder_depth: int = 1
    ssm_mode: str = "conv"
    # data extents, filled from the dataset when training
    joints: int = 8
    traj_len: int = 64
    d_txt: int = 32
    d_img: int = 32
    # optimisation
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    # ablations
    no_s4: bool = False
    no_trm: bool = False
    fc_only: bool = False
    no_tci_cross: bool = False
    pairing_order: str = "iii"
    threshold: float = 0.5
    extra: dict = field(default_factory=dict)

    def validate(self) -> "ModelConfig":
        if self.enc_layers < 1 or self.s4_blocks < 1:
            raise ConfigError("enc_layers and s4_blocks must be >= 1")
        if self.decoder_depth < 1:
            raise ConfigError("decoder_depth must be >= 1 (a model without decoder layers is not defined)")
        if self.width % 2 or self.width % self.head_count:
            raise ConfigError(f"width {self.width} must be even and divisible by head_count {self.head_count}")
        if self.chunk_len < 1 or self.state_size < 1:
            raise ConfigError("chunk_len and state_size must be >= 1")
        if self.pairing_order not in ("i", "ii", "iii"):
            raise ConfigError(f"unknown pairing order {self.pairing_order!r}")
        if sum([self.no_s4, self.no_trm, self.fc_only]) > 1:
            raise ConfigError("at most one of no_s4 / no_trm / fc_only may be set")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        if self.ssm_mode not in ("scan", "conv", "fft"):
            raise ConfigError(f"unknown ssm_mode {self.ssm_mode!r}")
        return self

    @property
    def mtf_variant(self) -> str:
        if self.fc_only:
            return "fc_only"
        if self.no_s4:
            return "no_s4"
        if self.no_trm:
            return "no_trm"
        return "full"

    def with_variant(self, variant: str) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
        cfg = dataclasses.replace(self, no_s4=False, no_trm=False, fc_only=False,
                                  no_tci_cross=False, pairing_order="iii")
        if variant.startswith("order_"):
            cfg.pairing_order = variant[len("order_"):]
        elif variant != "full":
            setattr(cfg, variant, True)
        return cfg.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def desk_profile(**overrides) -> ModelConfig:
    """The default CPU-sized profile used by the acceptance runs."""
    return ModelConfig(**overrides).validate()


def large_profile(**overrides) -> ModelConfig:
    """Sizes and optimiser settings of the original model (M=2, N=4, d'=512)."""
    base = dict(enc_layers=2, s4_blocks=4, width=512, lr=1e-5, beta1=0.9, beta2=0.98,
                batch_size=64, epochs=50)
    base.update(overrides)
    return ModelConfig(**base).validate()


def small_profile(**overrides) -> ModelConfig:
    """Tiny sizes for finite-difference checks."""
    base = dict(enc_layers=1, s4_blocks=2, width=8, chunk_len=4, state_size=3, head_count=2,
                traj_len=10, d_txt=5, d_img=6, joints=8)
    base.update(overrides)
    return ModelConfig(**base).validate()


PROFILES = {"desk": desk_profile, "large": large_profile, "small": small_profile}


def load_config(path: str | Path | None, profile: str = "desk", **overrides) -> ModelConfig:
    """Profile defaults, then the JSON file, then explicit overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    values = PROFILES[profile]().to_dict()
    if path is not None:
        try:
            file_values = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(file_values)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig.from_dict(values).validate()
