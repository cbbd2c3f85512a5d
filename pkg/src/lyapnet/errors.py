"""Exception hierarchy shared by every lyapnet module."""


class LyapnetError(Exception):
    """Base class for all library errors."""


class NumericError(LyapnetError, ArithmeticError):
    """A non-finite value was produced or supplied."""


class SizeError(LyapnetError, ValueError):
    pass


class ShapeError(LyapnetError, ValueError):
    pass


class ContractError(LyapnetError, RuntimeError):
    """An API was used out of order (e.g. backward with a stale cache)."""


class InputError(LyapnetError, ValueError):
    pass


class BudgetError(LyapnetError, ValueError):
    """A (delta, nu) budget violates a precondition."""


class DegenerateConeError(BudgetError):
    pass


class ComplexSlopesError(BudgetError):
    pass


class PlanningError(LyapnetError, ValueError):
    pass


class ConfigError(LyapnetError, ValueError):
    pass


class FormatError(LyapnetError, ValueError):
    """Malformed binary input; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
