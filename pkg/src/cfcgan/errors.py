"""Shared exception types."""


class ShapeMismatch(ValueError):
    """Raised when tensor shapes are incompatible; names the offending dimension."""


class SingularMatrix(ValueError):
    """Raised when a channel-mixing matrix is numerically singular."""

    def __init__(self, det: float):
        self.det = det
        super().__init__(f"channel mixing matrix is near singular: |det W| = {abs(det):.3e}")


class CheckpointError(ValueError):
    """Raised on malformed or version-mismatched checkpoint files."""


class DatasetError(ValueError):
    """Raised on inconsistent dataset configuration (e.g. overlapping seed ranges)."""


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite during training."""
