"""Exception hierarchy shared across the package.

The CLI maps each family onto an exit code, so new error types should
subclass one of the families below rather than ``Exception`` directly.
"""


class AaeError(Exception):
    """Base class for all package errors."""


# -- configuration / validation family (exit code 2) -------------------------

class ConfigError(AaeError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class ValidationError(AaeError, ValueError):
    """A value violates a documented invariant (range, sign, schema)."""


class SchemaError(ValidationError):
    """Input columns do not match the expected feature schema."""


class DimensionError(AaeError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ParseError(AaeError, ValueError):
    """A payload or file could not be parsed."""


# -- IO / transport family (exit code 3) -------------------------------------

class StorageError(AaeError, OSError):
    """A path is missing, unreadable or unwritable."""


class CheckpointVersionError(StorageError):
    """Checkpoint was written by an incompatible format or schema version."""


class TransportError(AaeError, ConnectionError):
    """Remote request failed after all retries."""


class CredentialError(AaeError, PermissionError):
    """The remote service rejected the API key."""


# -- numerical family (exit code 4) ------------------------------------------

class NumericalError(AaeError, ArithmeticError):
    """Non-finite values, divergence, or an aborted optimisation step."""


class DomainError(NumericalError):
    """Argument outside the mathematical domain of an operation."""
