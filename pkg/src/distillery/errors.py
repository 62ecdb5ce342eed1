"""Exception taxonomy for the toolkit.

Each class carries the CLI exit code used when the error escapes a
subcommand, so library and command-line behaviour stay in sync.
"""


class DistilleryError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class UsageError(DistilleryError):
    """Invalid invocation or API misuse, e.g. stepping a finished episode."""

    exit_code = 1


class ConfigError(DistilleryError):
    """Bad configuration: unknown key, invalid value, incompatible shapes."""

    exit_code = 2


class DomainError(ConfigError):
    """Argument outside its mathematical domain (temperature <= 0, ...)."""


class NumericError(DistilleryError):
    """Non-finite value where finite arithmetic is required."""

    exit_code = 3


class FormatError(DistilleryError):
    """Malformed, truncated, or corrupted artifact file."""

    exit_code = 4
