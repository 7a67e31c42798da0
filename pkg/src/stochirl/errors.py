"""Exception hierarchy shared by all stochirl modules."""


class StochIRLError(Exception):
    """Base class for all errors raised by stochirl."""


class DimensionError(StochIRLError, ValueError):
    """Matrix or vector shapes are inconsistent."""


class DefinitenessError(StochIRLError, ValueError):
    """A matrix required to be positive definite (or nonsingular) is not."""


class StabilityError(StochIRLError):
    """A feedback gain is not mean-square stabilizing."""


class SingularSystemError(StochIRLError):
    """A least-squares problem is rank deficient.

    Attributes
    ----------
    rank : int
        Numerical rank that was detected.
    required : int
        Rank needed for a unique solution.
    """

    def __init__(self, message, rank, required):
        super().__init__(message)
        self.rank = int(rank)
        self.required = int(required)


class ExcitationError(SingularSystemError):
    """Behavior data are not rich enough to identify the regression unknowns."""


class InformativityError(StochIRLError):
    """Expert demonstrations do not span the state space."""


class DivergenceError(StochIRLError):
    """A simulated state blew past the overflow guard."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = int(step)


class IterationError(StochIRLError):
    """An iteration failed to converge within its budget.

    ``residual`` holds the last convergence measure and ``history`` whatever
    partial record the caller produced (may be None).
    """

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history


class MonotonicityError(StochIRLError):
    """The cost-weight sequence of an IRL run stopped being positive definite."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class ConfigError(StochIRLError, ValueError):
    """Experiment configuration is invalid; ``field`` names the offending key path."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
