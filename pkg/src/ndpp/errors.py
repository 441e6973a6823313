"""Exception types raised across the package."""


class NdppError(Exception):
    """Base class for all domain errors."""


class DimensionError(NdppError, ValueError):
    pass


class SingularMatrix(NdppError, ArithmeticError):
    pass


class NotSkewSymmetric(NdppError, ValueError):
    pass


class TooLarge(NdppError, ValueError):
    pass


class FormatError(NdppError, ValueError):
    pass


class NumericalFailure(NdppError, ArithmeticError):
    pass


class NonPositiveMinor(NdppError, ArithmeticError):
    pass


class ZeroCount(NdppError, ValueError):
    pass


class EmptyDataset(NdppError, ValueError):
    pass


class SplitTooLarge(NdppError, ValueError):
    pass


class Diverged(NdppError, RuntimeError):
    pass


class UnknownItem(NdppError, KeyError):
    def __init__(self, items):
        self.items = list(items)
        super().__init__(f"unknown items: {', '.join(map(str, self.items))}")

    def __str__(self):
        return self.args[0]


class DegenerateGain(NdppError, ArithmeticError):
    """Greedy hit a marginal gain too small to divide by.

    ``partial`` holds the MapResult built from the items chosen so far.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateConditioning(NdppError, ArithmeticError):
    pass


class BasketTooSmall(NdppError, ValueError):
    pass


class ZeroReference(NdppError, ZeroDivisionError):
    pass


class RejectionExhausted(NdppError, RuntimeError):
    pass
