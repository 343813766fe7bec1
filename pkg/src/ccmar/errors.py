"""Exception hierarchy shared across the package."""


class CcmarError(Exception):
    """Base class for all package errors."""


class ConfigError(CcmarError, ValueError):
    """Invalid configuration: bad estimator id, grid, fold count, file key..."""


class ConditioningSetError(ConfigError):
    """A model term references a variable outside its legal conditioning set."""


class SchemaError(CcmarError, KeyError):
    """A referenced variable does not exist in the data."""

    def __str__(self):
        return Exception.__str__(self)


class MissingDataError(CcmarError, ValueError):
    """A referenced variable is missing (NaN) for some rows that need it."""


class SingularDesignError(CcmarError, ValueError):
    """Design matrix is rank deficient."""


class DomainError(CcmarError, ValueError):
    """Input outside the support required by an operation."""


class StateError(CcmarError, RuntimeError):
    """Operation called on an object that is not ready for it."""
