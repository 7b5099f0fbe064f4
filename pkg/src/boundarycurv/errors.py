"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class BoundaryCurvError(Exception):
    """Base class for all package errors."""


class InputError(BoundaryCurvError):
    """Malformed user input (expressions, spec files, flags)."""


class ParseError(InputError):
    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}")


class UnknownSymbol(ParseError):
    pass


class SpecError(InputError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class NumericalError(BoundaryCurvError):
    """Failure of a numerical procedure on otherwise valid input."""


class OrderExceeded(NumericalError):
    pass


class DomainError(NumericalError):
    pass


class NotSPD(NumericalError):
    pass


class SeriesDiverges(NumericalError):
    pass


class FocalPoint(NumericalError):
    pass


class IntegratorDiverged(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class ChartOverflow(NumericalError):
    pass
