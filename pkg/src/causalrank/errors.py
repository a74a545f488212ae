"""Exception types shared across the package."""


class CausalRankError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CausalRankError, ValueError):
    """An argument violates a documented precondition."""


class ParseError(CausalRankError):
    """A data file does not match the expected schema.

    Carries the offending location so callers can report it.
    """

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(message + (f" ({', '.join(loc)})" if loc else ""))
        self.line = line
        self.column = column


class DegenerateSplitError(CausalRankError):
    """A training split lacks treated or control units."""


class TrainingDivergedError(CausalRankError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class StepTooLargeError(CausalRankError):
    """A finite-difference perturbation left the valid domain."""
