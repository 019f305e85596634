"""First-passage-time toolkit for one-dimensional stochastic
integrate-and-fire neuronal models: closed forms, integral-equation
solvers, Monte Carlo with hidden-crossing corrections, the inverse
boundary problem, and parameter estimation.
"""

__version__ = "0.1.0"

from . import analytic, compare, errors, estimate, models, numeric, simulate
from .models import (
    Boundary, ConstantBoundary, DoubleReversal, Feller, HyperbolicBoundary,
    InitialCondition, JumpDiffusion, LinearBoundary, ModelSpec, OU,
    PeriodicBoundary, RRW, Stein, TabulatedBoundary, Wiener,
)

__all__ = [
    "__version__", "analytic", "compare", "errors", "estimate", "models",
    "numeric", "simulate",
    "Boundary", "ConstantBoundary", "DoubleReversal", "Feller",
    "HyperbolicBoundary", "InitialCondition", "JumpDiffusion",
    "LinearBoundary", "ModelSpec", "OU", "PeriodicBoundary", "RRW", "Stein",
    "TabulatedBoundary", "Wiener",
]
