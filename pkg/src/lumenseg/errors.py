"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, numeric failures exit 4.
"""


class LumensegError(Exception):
    exit_code = 1


class ConfigError(LumensegError):
    """Invalid configuration: bad flag values, incompatible model settings."""

    exit_code = 2


class ShapeError(ConfigError):
    """Array arguments whose shapes cannot be combined."""


class DataError(LumensegError):
    """Missing or inconsistent datasets, manifests, or run artifacts."""

    exit_code = 3


class FormatError(DataError):
    """Malformed file contents (image headers, weight files, manifests)."""


class NumericError(LumensegError):
    """Non-finite values where finite math was required (divergence)."""

    exit_code = 4
