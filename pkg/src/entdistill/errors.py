"""Exception types shared across the package."""


class EntDistillError(Exception):
    """Base class for all package errors."""


class NonPhysicalStateError(EntDistillError, ValueError):
    """A matrix fails the density-matrix invariants."""

    def __init__(self, message, invariant=None):
        super().__init__(message)
        self.invariant = invariant


class ZeroTraceError(EntDistillError, ValueError):
    """The state has been filtered away entirely; marginals are undefined."""


class NotDistillableError(EntDistillError):
    """A pure marginal forces the filter to zero and destroys the state."""


class NoConvergenceError(EntDistillError):
    """The alternating distillation did not reach the threshold in time.

    ``record`` holds the partial :class:`~entdistill.optics.DistillationRecord`.
    """

    def __init__(self, message, record=None, state=None):
        super().__init__(message)
        self.record = record
        self.state = state


class EstimationError(EntDistillError):
    """A shot-based estimate could not be formed (no surviving copies)."""


class ConsistencyError(EntDistillError):
    """A derived quantity left its physically allowed range."""
