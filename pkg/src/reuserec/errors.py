"""Exception classes shared across the package."""


class ReuserecError(Exception):
    """Base class for package errors."""


class ShapeError(ReuserecError):
    """Operand dimensions do not conform."""


class DegenerateInputError(ReuserecError):
    """Input is structurally valid but has no meaningful result
    (all-masked softmax, zero-norm vector, empty dataset after filtering)."""


class DataFormatError(ReuserecError):
    """Malformed input file or config document."""


class ContractViolationError(ReuserecError):
    """Caller broke an API precondition (mismatched trace, item id 0, ...)."""


class NumericalError(ReuserecError):
    """NaN/Inf appeared where finite values are required."""
