"""Exception hierarchy shared by every module of the package."""


class SusceptError(Exception):
    """Base class for all package errors."""


class MapSpecError(SusceptError, ValueError):
    """A map description fails validation."""


class ExpansionViolated(MapSpecError):
    """Some branch has ``|f'| <= 1``."""


class EndpointViolated(MapSpecError):
    """``f(a) != a`` or ``f(b) != a``."""


class DiscontinuousAtC(MapSpecError):
    """Left and right branches disagree at the critical point."""


class BranchUnavailable(SusceptError):
    """The requested inverse branch leaves the trapping interval."""

    def __init__(self, depth, message=None):
        self.depth = depth
        super().__init__(message or f"inverse branch unavailable at depth {depth}")


class NumericFailure(SusceptError):
    """Base class for failures that map to CLI exit status 3."""


class NoConvergence(NumericFailure):
    def __init__(self, iterations, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"no convergence after {iterations} iterations (residual={residual})")


class NotStochastic(NumericFailure):
    """A transfer matrix whose columns do not sum to one."""


class TailUnreachable(NumericFailure):
    """The data needed to certify a truncated series is not available."""


class NearSingular(NumericFailure):
    """A linear solve left a residual above its tolerance."""


class OrbitTooShort(SusceptError, ValueError):
    pass


class MeanNotZero(SusceptError, ValueError):
    """A deflated resolvent solve was requested on data with nonzero mean."""


class OutsideDomain(SusceptError, ValueError):
    """A series was evaluated where it is not known to converge."""


class NotPreperiodic(SusceptError, ValueError):
    pass


class NotHorizontal(SusceptError, ValueError):
    pass


class SingularSystem(NumericFailure):
    pass


class DepthBudgetExceeded(NumericFailure):
    pass


class NotFound(SusceptError):
    """Search finished without a result; ``finite_orbit`` flags a preperiodic orbit."""

    def __init__(self, message, finite_orbit=False):
        self.finite_orbit = finite_orbit
        super().__init__(message)
