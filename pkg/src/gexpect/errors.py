"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: input/evaluation problems exit 2,
budget exhaustion exits 3, capability limits exit 4.
"""


class GExpectError(Exception):
    """Base class for all package errors."""


class InputError(GExpectError, ValueError):
    """Invalid user input (shapes, tolerances, malformed documents)."""


class ParseError(InputError):
    """Payoff expression could not be parsed.

    ``offset`` is the byte offset of the offending token in the source text.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class EvaluationError(GExpectError, ArithmeticError):
    """Payoff evaluation produced a guarded division or a non-finite value."""


class GrowthClassError(InputError):
    """Payoff uses a non-polynomial primitive and no override was given."""


class GridTooNarrowError(GExpectError):
    """Probability mass beyond the value grid exceeds the leak threshold."""

    def __init__(self, message, leak):
        super().__init__(message)
        self.leak = leak


class CapabilityError(GExpectError):
    """Requested computation is outside what the grid engine supports."""


class BudgetExhaustedError(GExpectError):
    """An approximation could not be certified within the configured budget.

    ``achieved`` holds the best error bound reached before giving up.
    """

    def __init__(self, message, achieved=None, report=None):
        super().__init__(message)
        self.achieved = achieved
        self.report = report
