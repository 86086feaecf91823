"""
Exception hierarchy for fixdiff.

Every error raised on purpose by the library derives from FixdiffError, so
callers can catch one type. Numerical failures also derive from
ArithmeticError and argument problems from ValueError.
"""

from typing import Optional


class FixdiffError(Exception):
    """Base class for all fixdiff errors."""


class ArgumentError(FixdiffError, ValueError):
    """Raised when a precondition on an argument is violated."""


class ShapeError(ArgumentError):
    """Raised when array dimensions do not conform."""


class NonFiniteError(FixdiffError, ArithmeticError):
    """Raised when an input or a computed quantity contains NaN or Inf."""


class SingularSystemError(FixdiffError, ArithmeticError):
    """Raised by the dense solver when a pivot falls below the threshold."""

    def __init__(self, pivot: int, magnitude: float = 0.0):
        self.pivot = pivot
        self.magnitude = magnitude
        super().__init__(f"singular system (pivot {pivot}, |pivot|={magnitude:.3e})")


class DivergenceError(FixdiffError, ArithmeticError):
    """Raised when an iteration produces a non-finite or exploding iterate."""

    def __init__(self, message: str, iteration: int, step: Optional[float] = None):
        self.iteration = iteration
        self.step = step
        detail = f"{message} at iteration {iteration}"
        if step is not None:
            detail += f" (eta={step:.6g})"
        super().__init__(detail)


class BreakdownError(FixdiffError, ArithmeticError):
    """Raised by conjugate gradient on a zero or negative curvature direction."""

    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"conjugate gradient breakdown at iteration {iteration}")


class DataFormatError(FixdiffError, ValueError):
    """Raised by the dataset loaders on malformed input."""

    def __init__(
        self,
        message: str,
        offset: Optional[int] = None,
        row: Optional[int] = None,
        col: Optional[int] = None,
    ):
        self.offset = offset
        self.row = row
        self.col = col
        where = []
        if offset is not None:
            where.append(f"offset {offset}")
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"col {col}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ConfigError(FixdiffError, ValueError):
    """Raised when a configuration value is invalid; carries the dotted field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
