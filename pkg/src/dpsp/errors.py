"""Shared exception types. Every user-facing error carries a source span
(line, column) when one is known."""


class DpspError(Exception):
    """Base class for all toolchain errors."""


class SpannedError(DpspError):
    def __init__(self, msg, span=None):
        self.span = span
        if span is not None:
            msg = f"line {span[0]}, col {span[1]}: {msg}"
        super().__init__(msg)


class ParseError(SpannedError):
    pass


class TypecheckError(SpannedError):
    pass


class TaintError(SpannedError):
    pass


class EvalError(SpannedError):
    """Dynamic evaluation failure (head of empty list, missing score key, ...)."""


class NonterminationError(DpspError):
    """Loop iteration exceeded the configured support-point step cap."""


class BudgetError(DpspError):
    """Enumeration budget exhausted; only a partial result exists."""


class DegenerateNormalization(DpspError):
    """All weights zero: nothing to normalize."""
