"""Exception hierarchy shared by every module of the package."""


class PmapError(Exception):
    """Base class; the CLI turns any of these into a one-line error record."""

    kind = "error"


class DimensionError(PmapError, ValueError):
    kind = "dimension"


class NumericError(PmapError, ArithmeticError):
    kind = "numeric"


class ConfigError(PmapError, ValueError):
    kind = "config"


class FormatError(PmapError, ValueError):
    """Malformed dataset or checkpoint file.  ``offset`` is the byte position."""

    kind = "format"

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(PmapError, RuntimeError):
    kind = "training"


class CorrectnessError(PmapError, AssertionError):
    kind = "correctness"


class OracleUnavailableError(PmapError, LookupError):
    kind = "oracle_unavailable"
