"""Exception hierarchy shared by all engine components."""


class OscError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(OscError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigurationError(OscError):
    """A configuration value or combination of values is invalid."""


class NumericError(OscError):
    """A non-finite value appeared where finite numbers are required."""


class ContractError(OscError):
    """A caller violated an operation precondition."""


class MissingEntryError(OscError, KeyError):
    """A named agent, parameter, or state entry does not exist."""

    def __str__(self) -> str:  # KeyError quotes its message; keep it readable
        return Exception.__str__(self)


class BackendError(OscError):
    """A realization backend failed to produce a message."""
