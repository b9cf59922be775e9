"""Exception types shared across the package."""


class MarkovGameError(Exception):
    """Base class for all errors raised by this package."""


class NotStochastic(MarkovGameError, ValueError):
    pass


class TransientState(MarkovGameError, ValueError):
    pass


class ValidationError(MarkovGameError, ValueError):
    pass


class ParseError(MarkovGameError, ValueError):
    pass


class LpFailure(MarkovGameError, ArithmeticError):
    pass


class Infeasible(LpFailure):
    pass


class Unbounded(LpFailure):
    pass


class ToleranceNotReached(MarkovGameError):
    """Raised in strict mode; ``result`` holds the best result found."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NotConverged(MarkovGameError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class PreconditionViolated(MarkovGameError, ValueError):
    pass


class BadCombination(MarkovGameError, ValueError):
    pass


class FiberMismatch(MarkovGameError, ValueError):
    pass


class NotInH(MarkovGameError, ValueError):
    pass
