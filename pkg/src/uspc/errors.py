"""Exception types shared across the package."""


class UspcError(Exception):
    """Base class for all package errors."""


class ShapeError(UspcError, ValueError):
    """Tensor dimensions are incompatible with an operation."""


class ConfigError(UspcError, ValueError):
    """A configuration value is outside its legal range."""


class GraphError(UspcError, ValueError):
    """Misuse of the compute graph (e.g. backward from a non-scalar)."""


class DataError(UspcError, ValueError):
    """A corpus record or batch violates its contract."""


class PairingError(UspcError, ValueError):
    """Paired text/speech sequences disagree in length."""


class IntegrityError(UspcError, ValueError):
    """A stored record fails validation on load."""


class FormatError(UspcError, ValueError):
    """A serialized file has the wrong magic, version or layout."""


class UndefinedMetricError(UspcError, ValueError):
    """A metric has no defined value for these inputs."""


class TrainingDiverged(UspcError, RuntimeError):
    """Training aborted on a non-finite loss."""
