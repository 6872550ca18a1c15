# pani_lab/core/exceptions.py


class PaniLabError(Exception):
    """Base class for every error raised by the lab."""


class InvalidActionError(PaniLabError, ValueError):
    """Action vector is non-finite, has the wrong shape, or leaves its box."""


class NoiseSpecError(PaniLabError, ValueError):
    """Noise family used outside its domain (e.g. limit ratio on a mixture)."""


class ConfigError(PaniLabError, ValueError):
    """Configuration file or flag values that fail validation."""


class DatasetFormatError(PaniLabError):
    """Malformed JSONL dataset; carries the 1-based line number and offending key."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class ModelConstructionError(PaniLabError):
    """The NAMDP cannot be assembled from the dataset (e.g. dangling next state)."""


class ConvergenceError(PaniLabError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (final residual {residual:.3e})")


class BoundViolationError(PaniLabError):
    """Return-gap bound failed on an input where it must hold."""


class TrainingDivergenceError(PaniLabError):
    def __init__(self, step: int, loss_name: str, value: float):
        self.step = step
        self.loss_name = loss_name
        self.value = value
        super().__init__(f"non-finite {loss_name} ({value}) at step {step}")
