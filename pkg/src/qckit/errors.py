"""Exception hierarchy shared across the package."""


class QCKitError(Exception):
    """Base class for all errors raised by qckit."""


class ConfigurationError(QCKitError, ValueError):
    pass


class ShapeError(QCKitError, ValueError):
    pass


class ContractError(QCKitError):
    """A precondition between two collaborating objects was violated."""


class FormatError(QCKitError):
    """A binary file is truncated, corrupt, or of the wrong kind/version."""


class UnsupportedMeshError(QCKitError):
    pass


class MeshGenerationError(QCKitError):
    pass


class InterpolationError(QCKitError, ValueError):
    pass


class MetricError(QCKitError, ValueError):
    pass


class TrainingError(QCKitError):
    """Training diverged. ``checkpoint`` holds the last good state, if any."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
