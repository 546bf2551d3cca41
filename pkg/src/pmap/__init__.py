"""Pre-manipulation alignment prediction: S4 + transformer trajectory encoder,
trimodal cross-attention classifier, synthetic data and a numpy-only autodiff core."""

from .config import ModelConfig, desk_profile, load_config, large_profile, small_profile
from .data import Episode, GeneratorConfig, gen_episode, generate, oracle_label, read_dataset, write_dataset
from .errors import (
    ConfigError,
    CorrectnessError,
    DimensionError,
    FormatError,
    NumericError,
    OracleUnavailableError,
    PmapError,
    TrainingError,
)
from .model import AlignmentModel

__version__ = "0.1.0"

__all__ = [
    "AlignmentModel",
    "ConfigError",
    "CorrectnessError",
    "DimensionError",
    "Episode",
    "FormatError",
    "GeneratorConfig",
    "ModelConfig",
    "NumericError",
    "OracleUnavailableError",
    "PmapError",
    "TrainingError",
    "desk_profile",
    "gen_episode",
    "generate",
    "load_config",
    "oracle_label",
    "large_profile",
    "read_dataset",
    "small_profile",
    "write_dataset",
]
