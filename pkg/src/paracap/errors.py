"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class ConfigurationError(ValueError):
    """A config value (file or constructor argument) is invalid."""
