"""Exception taxonomy shared across the package.

The CLI maps ParameterError to exit code 2 and InfeasibleError to exit
code 3; everything else is a plain failure.
"""


class SensefedError(Exception):
    """Base class for package errors."""


class ParameterError(SensefedError, ValueError):
    """A configuration value or argument violates its contract."""


class ContractViolation(SensefedError, ValueError):
    """An input breaks a documented precondition (shape, modulus, rank)."""


class SingularGeometryError(SensefedError, ValueError):
    """Target position too close to a device for the path-loss model."""


class InfeasibleError(SensefedError, RuntimeError):
    """The requested constraint set is empty (e.g. energy floor above K*P)."""


class UnidentifiableError(SensefedError, RuntimeError):
    """Fisher information singular at the requested position."""
