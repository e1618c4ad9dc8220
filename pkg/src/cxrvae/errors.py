"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, see ``pipeline.cli``.
"""


class CxrVaeError(Exception):
    """Base class for all package errors."""


class DomainError(CxrVaeError, ValueError):
    """An argument lies outside the domain of an operation."""


class StructuralError(CxrVaeError, ValueError):
    """Shapes, lengths or row alignments do not match."""


class ParseError(CxrVaeError, ValueError):
    """A label row or file could not be parsed."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class PolicyConfigError(DomainError):
    """Invalid uncertainty-policy parameters."""


class TrainingError(CxrVaeError, ArithmeticError):
    """Numerical failure while training (non-finite loss or gradient)."""

    def __init__(self, message, *, epoch=None, batch=None, index=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.index = index


class UndefinedMetricError(CxrVaeError, ValueError):
    """AUROC requested on data containing a single class."""

    def __init__(self, n_pos, n_neg):
        super().__init__(f"AUROC undefined: {n_pos} positive and {n_neg} negative labels")
        self.n_pos = n_pos
        self.n_neg = n_neg


class ConfigError(CxrVaeError):
    """Invalid or inconsistent run configuration."""


class DataError(CxrVaeError):
    """Missing, unreadable or inconsistent on-disk data."""
