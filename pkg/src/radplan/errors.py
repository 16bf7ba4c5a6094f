"""Exception hierarchy shared by the solver, analysis and simulation layers."""


class RadplanError(Exception):
    """Base class for all library errors."""


class ValidationError(RadplanError, ValueError):
    """Input data violates a structural condition (h1/g1, coefficient sign, model invariants)."""


class InvalidModelError(ValidationError):
    pass


class DomainError(RadplanError, ValueError):
    """Argument outside the domain where a quantity is defined."""


class EnvelopeRangeError(RadplanError, ValueError):
    """Requested value lies beyond the guaranteed existence envelope of H."""


class UnsupportedDimensionError(RadplanError, ValueError):
    pass


class ExtrapolationError(RadplanError, ValueError):
    """A point lies outside the radial grid that backs a field."""


class NumericError(RadplanError, ArithmeticError):
    """A non-finite intermediate was produced."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class BlowUpError(NumericError):
    """The solution exceeded the blow-up cap.

    ``radius`` is the first radius where the cap was exceeded and
    ``solution`` holds the last finite iterate (flagged non-converged).
    """

    def __init__(self, message, radius, solution=None):
        super().__init__(message)
        self.radius = radius
        self.solution = solution
