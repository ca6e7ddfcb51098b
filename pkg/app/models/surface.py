"""
Pydantic models for flat surfaces glued from polygons.
"""
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from app.models.common import ComplexPair

# (polygon index, edge index); edge i runs from vertex i to vertex i+1
EdgeRef = Tuple[int, int]
# (polygon index, vertex index)
VertexRef = Tuple[int, int]


class Polygon(BaseModel):
    """Simple planar polygon, counterclockwise."""
    model_config = ConfigDict(frozen=True)

    vertices: List[ComplexPair]


class Gluing(BaseModel):
    """Edge B = zeta^rot * (edge A) + translation, orientations reversed."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    edge_a: EdgeRef = Field(alias="from")
    edge_b: EdgeRef = Field(alias="to")
    rot: int


class Mark(BaseModel):
    """Singularity label and order attached to a polygon vertex."""
    model_config = ConfigDict(frozen=True)

    vertex: VertexRef
    label: str
    order: int = 0  # 0 marks a regular point


class Cylinder(BaseModel):
    """Half-infinite flat cylinder attached along a loop of edges."""
    model_config = ConfigDict(frozen=True)

    circumference: float = Field(gt=0)
    edges: List[EdgeRef]  # loop order, each edge traversed with the polygon on its left
    label: Optional[str] = None  # pole label


class BoundaryEdge(BaseModel):
    """Free boundary edge of a cut or windowed surface."""
    model_config = ConfigDict(frozen=True)

    edge: EdgeRef
    label: Optional[str] = None  # pole label of the cylinder cut off here


class FlatSurface(BaseModel):
    """Flat model: polygons, rotation gluings, marks and infinite cylinders."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    k: int = Field(ge=1)
    polygons: List[Polygon]
    gluings: List[Gluing] = []
    marks: List[Mark] = []
    cylinders: List[Cylinder] = []
    boundary: List[BoundaryEdge] = []


class VertexClass(BaseModel):
    """Identified vertex with its total angle."""
    model_config = ConfigDict(frozen=True)

    index: int
    label: str
    order: int
    angle: float
    corners: List[VertexRef]
    junctions: int = 0  # cylinder loop junctions contributing pi each
    on_boundary: bool = False

    @property
    def singular(self) -> bool:
        return self.order != 0


class Period(BaseModel):
    """Integral of a k-th root branch between two conical singularities."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    source: str = Field(alias="from")
    target: str = Field(alias="to")
    value: ComplexPair
    branch: int = 0


class MetricReport(BaseModel):
    """Canonical length and area."""
    canonical_length: float = 0.0
    area: float = 0.0  # inf when an infinite cylinder is included


class PeriodFieldVerdict(BaseModel):
    """Outcome of the integer-relation search over Q[zeta]."""
    verdict: str  # rational_after_common_factor | not_detected
    common_factor: Optional[ComplexPair] = None
    coordinates: List[List[Tuple[int, int]]] = []  # per period: (numerator, denominator) per basis power
    failing_index: Optional[int] = None
