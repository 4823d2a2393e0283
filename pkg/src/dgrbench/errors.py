from __future__ import annotations

from typing import Optional


class DgrError(ValueError):
    """Base class for every error raised by dgrbench."""


class ConfigError(DgrError):
    pass


class DemSyntaxError(DgrError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None) -> None:
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column or 1}: {message}"
        super().__init__(message)


class DemRangeError(DemSyntaxError):
    """Probability or detector/observable index outside its allowed range."""


class DecompositionRequiredError(DgrError):
    pass


class UnsupportedModelError(DgrError):
    pass


class InsufficientDataError(DgrError):
    pass


class MatchingSizeError(DgrError):
    pass


class ContractViolation(DgrError):
    pass


class GraphMismatchError(DgrError):
    pass


class SchemaMismatchError(DgrError):
    pass


class BracketError(DgrError):
    pass
