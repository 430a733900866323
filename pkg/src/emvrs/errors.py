"""Exception hierarchy shared across the package."""


class EmvrsError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(EmvrsError):
    """Invalid or inconsistent configuration (bad keys, bad values)."""


class IngestionError(ConfigError):
    """Malformed market-data input; message carries the offending row."""


class NumericalDomainError(EmvrsError):
    """A quantity left its mathematically valid domain (e.g. P <= 0)."""


class DegenerateConfigurationError(EmvrsError):
    """A closed form is undefined for this configuration (zero denominator)."""


class ConvexityError(EmvrsError):
    """Second wealth-derivative of the value function is not positive."""


class MissingArtifactError(EmvrsError):
    """A required input artifact (trained model, data file) is absent."""
