"""Exception types shared across the package."""


class CamBoostError(Exception):
    """Base class. ``category`` is the machine-readable tag the CLI prints."""

    category = "error"


class DimensionError(CamBoostError, ValueError):
    category = "dimension"


class UsageError(CamBoostError, RuntimeError):
    category = "usage"


class ConfigError(CamBoostError, ValueError):
    category = "config"


class DataError(CamBoostError, ValueError):
    category = "data"


class UndefinedMetricError(CamBoostError, ValueError):
    """A correlation or AP that has no defined value (constant input, no positives)."""

    category = "undefined"


class TrainingDivergedError(CamBoostError, RuntimeError):
    category = "diverged"

    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss


class FormatError(CamBoostError, ValueError):
    category = "format"
