"""Exception hierarchy shared across the package."""


class ClickmaskError(Exception):
    """Base class for all domain errors."""


class ShapeError(ClickmaskError):
    """Tensor/array shapes violate an operation's contract."""


class NonFiniteError(ClickmaskError):
    """A kernel produced (or was handed) NaN/Inf values."""


class FrozenParameterError(ClickmaskError):
    """Optimizer step attempted on a non-trainable parameter."""


class OutOfBoundsClick(ClickmaskError):
    """Click coordinate outside the image; carries the click index."""

    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


class NoErrorPixels(ClickmaskError):
    """pred == gt: there is nothing left to click (caller must stop)."""


class SampleError(ClickmaskError):
    """A dataset sample failed to load; carries the sample id."""

    def __init__(self, sample_id: str, message: str):
        super().__init__(f"sample {sample_id!r}: {message}")
        self.sample_id = sample_id


class CheckpointError(ClickmaskError):
    """Checkpoint file unreadable, wrong version, or shape-incompatible."""


class ConfigError(ClickmaskError):
    """Invalid or unknown configuration key/value."""
