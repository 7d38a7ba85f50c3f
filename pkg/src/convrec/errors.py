"""Exception types shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, MissingArtifactError -> 3,
NumericError -> 4. Everything else is a plain bug and propagates.
"""


class ConvRecError(Exception):
    """Base class for all package errors."""


class ConfigError(ConvRecError):
    """Invalid configuration value or combination."""


class CatalogLoadError(ConvRecError):
    """Catalog or interaction-log file failed validation; message names the location."""


class MissingArtifactError(ConvRecError):
    """An upstream artifact (catalog, trained params, ...) is absent."""


class NumericError(ConvRecError):
    """Non-finite values encountered during training or inference."""
