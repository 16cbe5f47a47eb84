"""
errors.py

Exception hierarchy for the interference channel autoencoder toolkit.
Every error carries a short category and the exit code the CLI returns for it.
"""

from typing import Any, Optional


class IfcaeError(Exception):
    """Base class for all toolkit errors."""

    category = "error"
    exit_code = 1


class ConfigurationError(IfcaeError):
    """Invalid configuration value, unknown key or inconsistent network shape."""

    category = "config"
    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        super().__init__(message)
        self.key = key


class UsageError(IfcaeError):
    """API called with arguments that violate its preconditions."""

    category = "usage"
    exit_code = 2


class ModelFileError(IfcaeError):
    """Model file cannot be trusted: checksum, version or shape problem."""

    category = "model_file"
    exit_code = 3

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        super().__init__(message)
        self.field = field


class NumericalError(IfcaeError):
    """Non-finite activation, gradient or loss."""

    category = "numerical"
    exit_code = 4

    def __init__(self, message: str, layer_index: Optional[int] = None) -> None:
        super().__init__(message)
        self.layer_index = layer_index


class TrainingDivergedError(NumericalError):
    """Training aborted by the divergence guard or a non-finite loss."""

    def __init__(self, message: str, trace: Any = None) -> None:
        super().__init__(message)
        self.trace = trace


class DegenerateCodewordError(NumericalError):
    """A codeword with zero norm was found where a direction is required."""

    def __init__(self, message: str, message_index: int) -> None:
        super().__init__(message)
        self.message_index = message_index
