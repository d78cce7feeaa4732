"""Exception hierarchy shared by all modules."""


class HilbertSphereError(Exception):
    """Base class for library errors."""


class DimensionError(HilbertSphereError, ValueError):
    """Arrays or grids do not match in shape."""


class DomainError(HilbertSphereError, ValueError):
    """Input lies outside the domain of a map (antipodes, empty spectra, ...)."""


class ValidationError(HilbertSphereError, ValueError):
    """User-supplied data violates a documented precondition."""

    def __init__(self, message, *, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class FormatError(ValidationError):
    """A file could not be parsed into the expected table layout."""


class ConditioningError(HilbertSphereError, ArithmeticError):
    """An operator that must be inverted is (numerically) singular."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ConvergenceError(HilbertSphereError, ArithmeticError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, last_iterate=None, gradient_norm=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.gradient_norm = gradient_norm
        self.iterations = iterations


class DegenerateMean(DomainError):
    """A linear average vanished, so its normalization is undefined."""
