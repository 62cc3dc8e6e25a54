"""Geodesic flow machinery on flat surfaces with cone angles above 2*pi."""

from .errors import (
    BudgetExceeded,
    ConeHit,
    ConesurfError,
    DeltaTooLarge,
    EmptyK,
    EmptyPool,
    GeometryError,
    Infeasible,
    InsufficientMass,
    LengthMismatch,
    NoSharedSegment,
    NotGeodesic,
    NotInBox,
    NotRegular,
    NumericalAmbiguity,
    RecurrenceUnverifiable,
    SchemaError,
    TopologyError,
    WindowTooSmall,
    ZeroMass,
)
from .surface import (
    ConeClass,
    DevelopedFrame,
    FlatSurface,
    Gluing,
    PolygonChart,
    build_surface,
    builtin_octagon,
    builtin_slit_tori,
    cone_excess_min,
    develop_across,
    load_surface,
)

__version__ = "0.1.0"
