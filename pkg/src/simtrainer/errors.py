"""Exception hierarchy shared across the package.

The service layer maps these onto HTTP statuses, so raise the most
specific type that applies.
"""


class SimtrainerError(Exception):
    """Base class for all package errors."""


class SchemaError(SimtrainerError):
    """A record does not match the wire/file schema."""


class ContractViolation(SimtrainerError):
    """A caller broke an operation precondition (bad argument shapes, ranges)."""


class ConfigurationError(SimtrainerError):
    """A model, index, or service was configured or loaded inconsistently."""


class NotFoundError(SimtrainerError):
    """A referenced scene, session, or artifact does not exist."""


class IllegalStateError(SimtrainerError):
    """The operation is not valid in the session's current phase."""


class UndefinedResultError(SimtrainerError):
    """The requested statistic is undefined for the given input (e.g. no turns)."""
