"""Exception hierarchy shared across the toolkit.

Each class carries the process exit code the CLI maps it to:
2 = configuration, 3 = I/O or corrupt artifact, 4 = numerical failure.
"""


class DiffbcError(Exception):
    exit_code = 1


class ConfigError(DiffbcError):
    exit_code = 2


class ShapeError(DiffbcError):
    exit_code = 4


class DomainError(DiffbcError):
    """Raised when numeric inputs are outside the operation's domain (NaN/inf)."""

    exit_code = 4


class StateError(DiffbcError):
    """Raised when an operation is invoked out of order (e.g. backward without forward)."""

    exit_code = 4


class TrainingError(DiffbcError):
    exit_code = 4


class SamplingError(DiffbcError):
    """Non-finite value during reverse denoising; carries the offending timestep."""

    exit_code = 4

    def __init__(self, message, tau=None):
        super().__init__(message)
        self.tau = tau


class ArtifactError(DiffbcError):
    exit_code = 3


class CorruptArtifactError(ArtifactError):
    exit_code = 3
