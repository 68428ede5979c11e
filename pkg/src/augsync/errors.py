"""Exception types raised by the analysis routines."""


class AugsyncError(Exception):
    """Base class for all package errors."""


class StructuralError(AugsyncError):
    """Invalid network or device layout (bad bus id, missing parameter, ...)."""


class SingularAlgebraicJacobian(AugsyncError):
    """dg/dz is numerically singular; the state is at or near the impasse surface."""

    def __init__(self, rcond: float, message: str | None = None):
        self.rcond = rcond
        super().__init__(message or f"dg/dz numerically singular (rcond={rcond:.3e})")


class NewtonDivergence(AugsyncError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class RankDeficientWithoutPin(AugsyncError):
    """Newton matrix is rank deficient and no variable was pinned.

    This is the signature of a continuum of equilibria.
    """

    def __init__(self, sigma_ratio: float):
        self.sigma_ratio = sigma_ratio
        super().__init__(
            f"equilibrium Newton matrix is rank deficient (sigma_min/sigma_max={sigma_ratio:.3e}); "
            "pin a variable to select one equilibrium of the continuum"
        )


class WindowTooLong(AugsyncError):
    pass


class RankDeficiency(AugsyncError):
    """dg/dx2 lost full column rank, so its left inverse does not exist."""


class UnknownDeviceKind(AugsyncError):
    pass


class NotModular(AugsyncError):
    pass


class Infeasible(AugsyncError):
    def __init__(self, best_objective: float, iterations: int, best_P=None):
        self.best_objective = best_objective
        self.iterations = iterations
        self.best_P = best_P
        super().__init__(
            f"LMI search stopped after {iterations} iterations, best objective {best_objective:.4e}"
        )


class ClaimUnavailable(AugsyncError):
    pass


class ParseError(AugsyncError):
    def __init__(self, message: str, path: str | None = "<string>", line: int | None = None,
                 column: int | None = None):
        path = path or "<string>"
        self.path = path
        self.line = line
        self.column = column
        loc = path
        if line is not None:
            loc += f":{line}"
            if column is not None:
                loc += f":{column}"
        super().__init__(f"{loc}: {message}")


class MissingSection(ParseError):
    pass
