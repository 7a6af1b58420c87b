from __future__ import annotations

from typing import Any


class McfError(Exception):
    """Base class; `kind` is the short tag the CLI prints on failure."""

    kind = "error"


class ParameterError(McfError, ValueError):
    kind = "parameter"


class ConfigError(ParameterError):
    kind = "config"


class HypothesisViolation(ParameterError):
    kind = "hypothesis"

    def __init__(self, message: str, *, point: Any = None) -> None:
        super().__init__(message)
        self.point = point


class PreconditionError(ParameterError):
    kind = "precondition"


class MisuseError(ParameterError):
    kind = "misuse"


class GeometryError(McfError, ValueError):
    kind = "geometry"


class DomainError(McfError, ValueError):
    kind = "domain"


class CflViolation(McfError, ValueError):
    kind = "cfl"


class NumericBlowup(McfError, RuntimeError):
    kind = "blowup"

    def __init__(self, message: str, *, index: tuple[int, ...] | None = None) -> None:
        super().__init__(message)
        self.index = index


class BudgetExceeded(McfError, RuntimeError):
    kind = "budget"


class ResourceError(McfError, RuntimeError):
    kind = "resource"

    def __init__(self, message: str, *, required: int = 0, available: int = 0) -> None:
        super().__init__(message)
        self.required = required
        self.available = available


class UndecidedError(McfError, RuntimeError):
    kind = "undecided"


class InternalSearchError(McfError, RuntimeError):
    kind = "internal"
