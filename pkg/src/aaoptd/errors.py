"""Exception types shared across the package."""


class AAError(Exception):
    """Base class for package errors."""


class WindowError(AAError):
    """Base class for QR window failures."""


class DimensionError(WindowError, ValueError):
    """A vector does not match the window dimension."""


class CapacityError(WindowError):
    """Append attempted on a full window."""


class EmptyWindowError(WindowError):
    """Operation needs at least one stored column."""


class SingularWindowError(WindowError, ArithmeticError):
    """Triangular factor has a negligible diagonal entry."""


class DivergenceError(AAError, ArithmeticError):
    """Iteration produced non-finite values or blew up.

    ``report`` carries the partial :class:`~aaoptd.accelerator.SolveReport`
    when raised by a solver; it is ``None`` when raised by a problem map.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NotFoundError(AAError, KeyError):
    """Unknown catalog entry."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""
