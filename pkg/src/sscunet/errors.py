"""Exception types shared across the toolkit."""


class SscuError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(SscuError, ValueError):
    pass


class ParameterError(SscuError, ValueError):
    pass


class DomainError(SscuError, ValueError):
    pass


class DegenerateInputError(SscuError, ValueError):
    pass


class ArchitectureError(SscuError, ValueError):
    pass


class FormatError(SscuError):
    """Malformed or inconsistent bundle/result files."""


class ConstraintError(SscuError, ValueError):
    """Data violates ANC/ASC or nonnegativity constraints."""


class GenerationError(SscuError, RuntimeError):
    pass


class NumericalError(SscuError, RuntimeError):
    """Non-finite values or solver failure during computation."""
