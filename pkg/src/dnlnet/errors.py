"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, I/O and format
errors -> 3, IncompleteModelError -> 4.
"""


class DnlNetError(Exception):
    """Base class for all package errors."""


class ConfigError(DnlNetError):
    """Invalid shapes, hyper-parameters, or configuration files."""


class WeightsFormatError(DnlNetError):
    """Malformed weights file: bad magic, bad version, or truncation."""


class IncompleteModelError(DnlNetError):
    """A weight store is missing tensors required by the active config."""
