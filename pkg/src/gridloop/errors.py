"""Exception taxonomy shared across the package."""


class GridloopError(Exception):
    """Base class for all gridloop errors."""


# ---- case ingestion / model validation -------------------------------------

class MalformedTable(GridloopError):
    """A case table has the wrong shape or an unsupported entry."""


class UnknownBusReference(GridloopError):
    """A branch or generator references a bus id that does not exist."""


class MultipleSlack(GridloopError):
    """The case does not contain exactly one slack bus."""


class DisconnectedGraph(GridloopError):
    """The in-service branch graph does not connect all buses."""


class UnassignedBus(GridloopError):
    """An area partition leaves at least one bus without an area."""


class DisconnectedArea(GridloopError):
    """An area's induced subgraph is not connected."""


# ---- numerics ---------------------------------------------------------------

class NonConvergence(GridloopError):
    """An iterative solve hit its iteration cap without meeting tolerance."""


class SingularJacobian(GridloopError):
    """The power flow Jacobian is singular at the requested point."""


class Infeasible(GridloopError):
    """No point satisfies the constraint set within tolerance."""


class IterationLimit(GridloopError):
    """The QP active-set loop exceeded its iteration budget."""


class NoInformativePairs(GridloopError):
    """All sampled pairs were degenerate; no cocoercivity ratio available."""


class PlantNonConvergence(NonConvergence):
    """The plant failed to converge during a closed-loop run.

    Carries the partial simulation log recorded up to the failing period.
    """

    def __init__(self, message: str, partial_log=None):
        super().__init__(message)
        self.partial_log = partial_log


class UsageError(GridloopError):
    """Command line arguments could not be interpreted."""
