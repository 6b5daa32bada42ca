"""Exception hierarchy shared by all modules.

Errors split into two families so the command-line front end can map them
onto exit codes: configuration/input problems and numerical aborts.
"""

from __future__ import annotations


class QclError(Exception):
    """Base class for every error raised by the package."""


class InputError(QclError, ValueError):
    """Inconsistent shapes, invalid matrices or out-of-range parameters."""


class ConfigError(InputError):
    """A run configuration could not be parsed or validated."""


class NumericalAbort(QclError, RuntimeError):
    """A numerical procedure stopped before reaching its contract."""

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = dict(context)


class BranchError(NumericalAbort):
    """Principal logarithm is ambiguous (an eigen-angle sits on the cut)."""


class EnumerationBoundError(InputError):
    """Permutation enumeration requested beyond the hard cap."""


class BoundInapplicableError(InputError):
    """A convergence-time bound is evaluated outside its domain."""


class FlowMonotonicityError(NumericalAbort):
    """A flow step decreased (ascent) or increased (descent) the objective."""


class SingularResolventError(NumericalAbort):
    """The closed-form gate flow hit a non-invertible resolvent."""


class GammaAbort(NumericalAbort):
    """The homotopy normalizer became too small (near a critical manifold)."""


class StepFloorAbort(NumericalAbort):
    """Adaptive step control shrank the step below its floor."""


class InfeasibleTrackError(InputError):
    """A requested observable track leaves the attainable spectrum interval."""


class ConditionAbort(NumericalAbort):
    """The correlation matrix is too ill-conditioned to solve for a field update."""


class DivergenceAbort(NumericalAbort):
    """Tracking residual grew beyond its allowed multiple of the tolerance."""


class ConvergenceError(NumericalAbort):
    """An iterative solver hit its iteration cap without converging."""
