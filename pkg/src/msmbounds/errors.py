"""Exception hierarchy shared by every analysis stage."""


class MSMError(Exception):
    """Base class for all package errors."""


class SchemaError(MSMError):
    """A required column is missing from the input file."""


class ParseError(MSMError):
    """A cell could not be parsed as a finite number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(MSMError):
    """Data parsed but violates a dataset invariant."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ConfigurationError(MSMError):
    """Invalid analysis configuration (grids, fold counts, levels)."""


class FoldError(MSMError):
    """A cross-fitting training set lacks one of the treatment classes."""


class FitError(MSMError):
    """A nuisance model failed to fit."""


class ExtrapolationError(MSMError):
    """Query point lies too far from the training data for kernel weights."""


class DomainError(MSMError):
    """Argument outside the mathematical domain of an operation."""


class InfeasibleTargetError(DomainError):
    """Sensitivity-value target is below the support of the outcome law."""


class DegenerateGridError(MSMError):
    """Bootstrap standardization impossible because a standard error is zero."""
