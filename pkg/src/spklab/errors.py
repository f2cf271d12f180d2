"""Exception types shared across the package."""


class DomainError(ValueError):
    """Raised when an operation's input violates its contract."""


class DegenerateCohortError(DomainError):
    """Raised when a cohort's top-N score spread is too small to normalize by."""


class TrainingDiverged(RuntimeError):
    """Raised when a loss value or parameter goes non-finite during training."""

    def __init__(self, message: str, epoch: int, batch_index: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index


class ConfigError(ValueError):
    """Raised for malformed configuration files or unknown keys."""
