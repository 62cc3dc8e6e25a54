"""Exception types shared across the package."""


class ConesurfError(Exception):
    """Base class for all conesurf errors."""


class SchemaError(ConesurfError):
    """Surface file does not conform to the published schema."""


class GeometryError(ConesurfError):
    """Chart or gluing data is geometrically inconsistent."""


class TopologyError(ConesurfError):
    """Surface fails a topological requirement (Gauss-Bonnet, genus, cones)."""


class NumericalAmbiguity(ConesurfError):
    """A computation passed within snapping tolerance of a cone point."""

    def __init__(self, message, time=None, cone=None):
        super().__init__(message)
        self.time = time
        self.cone = cone


class ConeHit(ConesurfError):
    """A traced ray ran into a cone point and no continuation was supplied.

    Carries the admissible continuation intervals (signed turning angles)
    and an opaque resume token accepted by ``continue_through_cone``.
    """

    def __init__(self, time, cone, continuations, resume):
        super().__init__(f"ray hits cone class {cone} at t={time:.12g}")
        self.time = time
        self.cone = cone
        self.continuations = continuations
        self.resume = resume


class NotGeodesic(ConesurfError):
    """Requested continuation violates the both-sides >= pi condition."""


class WindowTooSmall(ConesurfError):
    """A trace does not cover the time window an operation requires."""


class BudgetExceeded(ConesurfError):
    """An unfolding or enumeration exceeded its configured budget."""


class NotRegular(ConesurfError):
    """Trace has no qualifying excess turn for the requested leaf."""


class DeltaTooLarge(ConesurfError):
    """Requested leaf radius exceeds the validity threshold."""


class NoSharedSegment(ConesurfError):
    """Bracket arguments do not share a common segment around time zero."""


class NotInBox(ConesurfError):
    """Geodesic is not a member of the given rectangle or flow box."""


class EmptyPool(ConesurfError):
    """An estimator was handed an empty candidate pool."""


class ZeroMass(ConesurfError):
    """A conditional or ratio was requested on a zero-mass set."""


class InsufficientMass(ConesurfError):
    """Histogram bins fell below the configured count floor."""


class RecurrenceUnverifiable(ConesurfError):
    """A point's trace window was exhausted before certifying recurrence."""


class EmptyK(ConesurfError):
    """Partition construction was handed an empty compact set."""


class LengthMismatch(ConesurfError):
    """Partition sequences have different lengths."""


class Infeasible(ConesurfError):
    """Transportation problem has mismatched total masses."""
