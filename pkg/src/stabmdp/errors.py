"""Exception types shared across the library."""


class StabMdpError(Exception):
    """Base class for all library-specific failures."""


class NonConvergent(StabMdpError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, *, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SingularSystem(StabMdpError):
    """A linear fixed-point system is numerically singular."""


class NonUnichain(StabMdpError):
    """The closed-loop Markov chain has no unique stationary distribution."""


class LimitDoesNotExist(StabMdpError):
    """Expected values oscillate instead of settling to a limit."""


class ExistenceViolation(StabMdpError):
    """The action-curvature term lost positive definiteness mid-recursion."""


class UndefinedOffset(StabMdpError):
    """The stochastic value offset has a pole at gamma = 1."""


class DomainError(StabMdpError, ValueError):
    """An argument is outside the admissible domain."""


class Infeasible(StabMdpError):
    """The constraint system admits no solution."""


class Unbounded(StabMdpError):
    """The objective is unbounded over the feasible set."""


class EmptySet(StabMdpError):
    """A polytope operation received or produced an empty set."""


class MaxIterations(StabMdpError):
    """An optimizer hit its iteration cap before reaching tolerance."""

    def __init__(self, message, *, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class DegenerateActiveSet(StabMdpError):
    """A constraint is weakly active; sensitivities are ill-defined."""


class SkippedSample(StabMdpError):
    """A learning sample cannot contribute a usable gradient."""


class AllSamplesSkipped(StabMdpError):
    """Every sample in a batch was skipped."""


class ProjectionFailure(StabMdpError):
    """No parameter scaling satisfies the stability projection."""


class EmptyTerminalSet(StabMdpError):
    """The terminal invariant set emptied for the current parameters."""


class InstabilityError(StabMdpError):
    """A feedback matrix expected to be stabilizing is not."""


class ConfigError(StabMdpError):
    """An experiment configuration file is malformed."""
