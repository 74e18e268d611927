"""Exception hierarchy shared by all modules.

Each class carries the process exit code the CLI maps it to.
"""


class PoseSceneError(Exception):
    exit_code = 1


class ConfigError(PoseSceneError):
    """Unknown key, invalid value, or unusable flag combination."""

    exit_code = 2


class DataError(PoseSceneError):
    """Rejected input: malformed file, dimension mismatch, invalid record."""

    exit_code = 3


class ModelStateError(PoseSceneError):
    """Operation needs trained parameters that are missing or incompatible."""

    exit_code = 4


class NumericError(PoseSceneError):
    """Non-finite value or numerically invalid operation."""

    exit_code = 5


class DegenerateRotationError(NumericError):
    """Six-number rotation input that collapses under Gram-Schmidt."""
