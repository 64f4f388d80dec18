"""Exception hierarchy for the impact point prediction toolkit."""


class IppError(Exception):
    """Base class for every error raised by projectile_ipp."""


class ScenarioError(IppError, ValueError):
    """Scenario document could not be parsed or violates an invariant."""


class SingularityError(IppError, ArithmeticError):
    """A model term divides by cos(theta), V or a mean-field reciprocal near zero."""


class DegenerateFlowError(IppError, ArithmeticError):
    """Canard root flow has u_ci <= 0 so the incidence resolution is invalid."""


class HorizonExceededError(IppError, RuntimeError):
    """Integration reached max_span before the altitude crossing."""


class StatisticsError(IppError, ValueError):
    """Too few impact points to form statistics."""


class GuidanceRangeError(IppError, ValueError):
    """Desired-point lookup falls outside the desired trajectory."""


class UnsupportedMomentOrderError(IppError, ValueError):
    """Closure was asked for a moment above third order."""


class TrajectoryFileError(IppError, ValueError):
    """Desired-trajectory file is malformed."""
