"""Exception types raised across the package."""


class ManifoldMCMCError(Exception):
    """Base class for all package errors."""


class RankDeficient(ManifoldMCMCError):
    """The constraint Jacobian lost rank at the evaluation point."""


class SingularGram(ManifoldMCMCError):
    """The k-by-k Gram matrix of the constraint Jacobian is numerically singular."""


class ConstraintViolated(ManifoldMCMCError):
    """A state that should lie on the constraint surface does not."""


class OffManifold(ManifoldMCMCError):
    """A point handed to a surface-only routine is too far from the surface."""


class ProjectionFailed(ManifoldMCMCError):
    """Newton projection of an initial state onto the surface did not converge."""


class DegenerateLeadingCoefficient(ManifoldMCMCError):
    """Polynomial degree collapsed to zero with a nonzero constant term."""


class InfinitelyManyRoots(ManifoldMCMCError):
    """The polynomial is identically zero."""


class NoPolyStructure(ManifoldMCMCError):
    """The constraint map does not expose the polynomial structure required."""


class RankTableMissing(ManifoldMCMCError):
    """The ranked selection policy has no row for the observed solution count."""


class EmptyStats(ManifoldMCMCError):
    """Summary rates requested for statistics with no iterations."""


class SparseBins(ManifoldMCMCError):
    """A goodness-of-fit bin has an expected count below the validity floor."""


class InvalidSignPattern(ManifoldMCMCError):
    """A sign pattern that cannot occur on the constraint surface; corrupt state."""


class UnknownProblem(ManifoldMCMCError):
    """No built-in problem with the requested name."""


class MissingParam(ManifoldMCMCError):
    """A required problem parameter was not supplied."""


class ConfigError(ManifoldMCMCError):
    """A run configuration failed schema validation.

    ``field`` holds a dotted path naming the offending entry.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ChainAbort(ManifoldMCMCError):
    """A numeric failure occurred while running a chain.

    Wraps the underlying error together with the iteration index at which the
    chain became unusable.
    """

    def __init__(self, iteration, message):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")
