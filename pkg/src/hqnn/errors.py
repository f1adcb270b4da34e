"""Exception types shared across the package."""


class HqnnError(Exception):
    """Base class for all package errors."""


class DimensionError(HqnnError):
    """Shapes or indices are incompatible with an operation's contract."""


class ConfigError(HqnnError):
    """A parameter or configuration value is outside its allowed range."""


class DataError(HqnnError):
    """Input data is missing, unreadable, or inconsistent."""


class ContractError(HqnnError):
    """An API was called in a way that violates its documented contract."""


class DivergenceError(HqnnError):
    """Training produced a non-finite loss."""


class UsageError(HqnnError):
    """Bad command-line invocation."""
