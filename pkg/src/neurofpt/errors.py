"""Exception hierarchy and warning categories shared by all modules."""


class NeuroFptError(Exception):
    """Base class for all library errors."""


class DomainError(NeuroFptError):
    """Argument outside the state space or ordering constraints violated."""


class UnsupportedModel(NeuroFptError):
    """The requested operation has no implementation for this model variant."""


class UnsupportedUnderlying(UnsupportedModel):
    """Jump-model recursion requires an underlying with a closed Laplace transform."""


class NoSteadyState(NeuroFptError):
    """The model admits no steady-state density."""


class SeriesDivergence(NeuroFptError):
    """An infinite series hit its term budget before reaching tolerance."""

    def __init__(self, message, terms=None, last_term=None):
        super().__init__(message)
        self.terms = terms
        self.last_term = last_term


class SpecialFunctionOverflow(NeuroFptError):
    """A special-function evaluation left its reliable range."""


class RegimeViolation(NeuroFptError):
    """Hard failure of an approximation's applicability conditions."""


class RootNotBracketed(NeuroFptError):
    """Root finder could not bracket a sign change."""


class RootNotFound(NeuroFptError):
    """Sequential root finder failed at a knot; partial result attached."""

    def __init__(self, message, knot=None, partial=None):
        super().__init__(message)
        self.knot = knot
        self.partial = partial


class NonPositiveDensity(NeuroFptError):
    """Input density fails positivity requirements."""


class StepTooCoarse(NeuroFptError):
    """The integration step violates the twenty-steps-before-the-peak rule."""


class QuadratureFailure(NeuroFptError):
    """Adaptive quadrature could not reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class TooFewSamples(NeuroFptError):
    """Sample too small for the requested nonparametric operation."""


class GridMismatch(NeuroFptError):
    """Two grid quantities are not on compatible grids."""


class MissingMoment(NeuroFptError):
    """A required moment is unavailable or infinite."""


class DegenerateTrace(NeuroFptError):
    """Trace statistics make an estimator denominator vanish."""


class NonpositiveState(NeuroFptError):
    """Feller-type estimator fed values at or below the lower reversal level."""


class ValidityFailure(NeuroFptError):
    """Estimator guard tripped: statistics too close to their degenerate point."""


class NoComparableMethods(NeuroFptError):
    """Fewer than two requested methods apply to the configured problem."""


class SparseWindow(NeuroFptError):
    """Too few observations inside the kernel window."""


class ConfigError(NeuroFptError):
    """CLI / experiment configuration is invalid or incomplete."""


class AccuracyWarning(UserWarning):
    """Result returned but outside the documented comfort zone."""


class RegimeWarning(UserWarning):
    """Approximation used near the edge of its validity band."""
