"""Exception types shared across the package."""


class MBAError(Exception):
    """Base class for all package errors."""


class ShapeError(MBAError, ValueError):
    """Operand extents are incompatible."""


class NonFiniteError(MBAError, FloatingPointError):
    """An operation produced NaN or Inf."""


class DataError(MBAError):
    """Dataset layout, manifest or image decoding problem."""


class CheckpointError(MBAError):
    """Checkpoint file is corrupt or does not match the network."""


class ConfigError(MBAError, ValueError):
    """Unknown or malformed configuration key."""


class TrainingDivergedError(NonFiniteError):
    """Loss became non-finite during training."""

    def __init__(self, message, *, epoch=None, batch=None, gammas=None, lr=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.gammas = gammas or {}
        self.lr = lr


class EmbeddingError(MBAError, ValueError):
    """Embeddings cannot be ranked (zero norm, empty set, label mismatch)."""
