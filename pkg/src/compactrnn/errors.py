"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates an operation's precondition."""


class InvalidConfigError(ValueError):
    """A configuration is inconsistent or cannot be satisfied."""


class InvalidStateError(RuntimeError):
    """An object was used out of sequence (e.g. stale backward caches)."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite or exploded loss.

    Carries the epoch index at which divergence was detected.
    """

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, truncated, or malformed."""


class UnsupportedVersionError(CheckpointError):
    """A checkpoint has a valid header but an unknown format version."""
