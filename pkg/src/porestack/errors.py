"""Exception hierarchy shared across the package.

Every error raised on a user-facing path carries a short machine-readable
category so the command-line layer can map failures to exit codes without
string matching.
"""


class PorestackError(Exception):
    """Base class for all package errors."""

    category = "error"


class DataError(PorestackError):
    """Malformed, inconsistent, or out-of-contract data."""

    category = "data"


class ConfigError(PorestackError):
    """Invalid configuration value or combination."""

    category = "config"


class SolverError(PorestackError):
    """An iterative solver failed to converge or a geometry attempt failed."""

    category = "solver"


class TrainingError(PorestackError):
    """Training could not proceed (empty dataset, bad checkpoint, ...)."""

    category = "training"


class MissingInputError(PorestackError):
    """A required input file or directory does not exist."""

    category = "missing-input"
