"""Exception taxonomy shared by every module.

User-facing errors (bad config, bad data, bad checkpoint) map to CLI exit
code 1; contract violations signal an internal bug and map to exit code 2.
"""


class KancutError(Exception):
    """Base class for all package errors."""


class DimensionError(KancutError):
    """Operand shapes are incompatible."""


class ParameterError(KancutError):
    """An argument value is outside its documented range."""


class DomainError(KancutError):
    """A math operation was applied outside its domain (log <= 0, div by 0)."""


class ContractError(KancutError):
    """An API contract was violated (internal invariant, exit code 2)."""


class ConfigError(KancutError):
    """Malformed or out-of-range configuration input."""


class DatasetError(KancutError):
    """Dataset directory missing, empty, or undecodable."""


class CheckpointError(KancutError):
    """Checkpoint file is corrupt, truncated, or mismatched."""


class TrainingDivergedError(KancutError):
    """A loss became non-finite during training."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"training diverged at iteration {iteration}")
