"""Exception hierarchy shared by the solver, the monitors and the harness."""


class FeneError(Exception):
    """Base class for every error raised by this package."""


class BadParameter(FeneError, ValueError):
    pass


class NonPositiveViscosity(BadParameter):
    pass


class BadGrid(BadParameter):
    pass


class DeltaTooLarge(BadParameter):
    pass


class QuadratureOrderTooLow(FeneError):
    pass


class BasisMismatch(FeneError):
    pass


class DensityNonPositive(FeneError):
    pass


class NotSolenoidal(FeneError):
    pass


class SolveFailed(FeneError):
    pass


class ZeroMode(FeneError, ValueError):
    pass


class EigSolverFailure(FeneError):
    pass


class SimulationError(FeneError):
    """A step failed; ``t`` is the time of the last good state."""

    def __init__(self, message, t):
        super().__init__(f"{message} (at t={t:.6g})")
        self.t = t


class EmptyTrace(FeneError, ValueError):
    pass


class NonPositiveSeries(FeneError, ValueError):
    pass


class DegenerateAbscissa(FeneError, ValueError):
    pass


class ParseError(FeneError, ValueError):
    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" [{', '.join(where)}]" if where else ""
        super().__init__(message + suffix)
        self.field = field
        self.line = line


class MismatchedBases(BasisMismatch):
    pass


class IoError(FeneError, OSError):
    pass
