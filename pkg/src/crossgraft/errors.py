"""Exception taxonomy shared by all modules.

Each class maps onto one CLI exit code (see cli.EXIT_CODES): configuration
problems exit 2, data/ingestion problems 3, numerical failures 4, and
I/O or file-format failures 5.
"""


class CrossgraftError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(CrossgraftError):
    """Invalid configuration, unknown identifiers, or incompatible shapes."""


class ContractViolation(ConfigurationError):
    """A tensor fed to a network op does not match its declared shape/range."""


class DataError(CrossgraftError):
    """Bad data content (labels out of range, empty sets, ...)."""


class IngestionError(DataError):
    """A raw archive is missing, truncated, or otherwise unreadable."""


class NumericalError(CrossgraftError):
    """A non-finite value was produced during optimization."""


class PersistenceError(CrossgraftError):
    """Checkpoint or cache files cannot be read or written."""


class IntegrityError(PersistenceError):
    """A stored digest does not match the file contents."""


class UnsupportedVersionError(PersistenceError):
    """The file declares a format version this build does not understand."""
