"""
Pydantic models for decompositions, level functions and packs.
"""
import math
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from app.models.common import ComplexPair
from app.models.trajectory import ChartSegment

TileKind = Literal["Triangle", "Trapezoid", "Cylinder"]


class Tile(BaseModel):
    """Piece of a decomposition, in the developed frame of its component."""
    model_config = ConfigDict(frozen=True)

    index: int
    kind: TileKind
    component: int = -1  # -1 for the infinite cylinders cut off first
    vertices: List[ComplexPair] = []  # counterclockwise; empty for infinite cylinders
    provenance: List[str] = []  # per side: cut, slice or split
    circumference: Optional[float] = None
    height: Optional[float] = None  # inf for an infinite cylinder
    label: Optional[str] = None  # pole label of an infinite cylinder


class Face(BaseModel):
    """Part of one chart bounded by chart edges and cut segments."""
    model_config = ConfigDict(frozen=True)

    polygon: int
    vertices: List[ComplexPair]  # chart coordinates
    rot: int = 0  # chart -> frame is x -> zeta^rot x + shift
    shift: ComplexPair = 0j


class Component(BaseModel):
    """Connected piece of the surface minus the cut, developed into one frame."""
    model_config = ConfigDict(frozen=True)

    index: int
    kind: Literal["polygon", "cylinder"]
    faces: List[Face]
    outline: List[ComplexPair] = []  # developed boundary of polygon components
    deck: Optional[ComplexPair] = None  # frame translation closing a cylinder component


class Decomposition(BaseModel):
    """Cut, components and tiles of a surface."""
    k: int
    cut: List[ChartSegment] = []
    components: List[Component] = []
    tiles: List[Tile] = []
    cylinders: List[Tile] = []
    complete: bool = True
    message: Optional[str] = None


class LevelCell(BaseModel):
    """Convex chart piece where Phi(x) = Re(conj(gradient) x) + offset."""
    model_config = ConfigDict(frozen=True)

    chart: int
    vertices: List[ComplexPair]
    gradient: ComplexPair
    offset: float = 0.0
    tile: int = -1

    def value(self, x: complex) -> float:
        return (self.gradient.conjugate() * x).real + self.offset

    def branch(self, k: int) -> Tuple[int, float]:
        """Nearest branch index b with gradient i*zeta^(-b), and the angle error."""
        ratio = self.gradient / 1j
        b = round(-math.atan2(ratio.imag, ratio.real) * k / (2 * math.pi)) % k
        target = 1j * complex(math.cos(-2 * math.pi * b / k), math.sin(-2 * math.pi * b / k))
        error = abs(math.atan2((self.gradient / target).imag, (self.gradient / target).real))
        return b, error


class CylinderCell(BaseModel):
    """Phi = sign * h + offset on an infinite cylinder, h the distance from its loop."""
    model_config = ConfigDict(frozen=True)

    cylinder: int
    label: Optional[str] = None
    sign: int
    offset: float = 0.0
    circumference: float


class SwitchingSegment(BaseModel):
    """Straight chart segment where Phi is not smooth."""
    model_config = ConfigDict(frozen=True)

    chart: int
    start: ComplexPair
    end: ComplexPair
    kind: Literal["switching", "special"] = "switching"  # special: opposite gradients, a level ridge or valley
    level: Optional[float] = None  # Phi along special segments


class Node(BaseModel):
    """Endpoint of switching segments."""
    model_config = ConfigDict(frozen=True)

    key: str
    chart: int
    z: ComplexPair
    valency: int
    label: Optional[str] = None
    order: Optional[int] = None
    tag: Literal["singular", "secondary", "regular"] = "regular"
    level: float = 0.0


class LevelFunction(BaseModel):
    """ps-level function on a flat surface."""
    k: int
    digest: str = ""  # identifies the surface
    cells: List[LevelCell]
    cylinder_cells: List[CylinderCell] = []
    segments: List[SwitchingSegment] = []
    nodes: List[Node] = []
    tiles: List[Tile] = []


class LevelCurve(BaseModel):
    """Level component traced through cells."""
    level: float
    points: List[Tuple[int, ComplexPair]] = []  # (chart, point) polyline
    cells: List[int] = []
    closed: bool = False
    special: bool = False
    length: float = 0.0
    residual: float = 0.0
    switching_points: int = 0


class PackPiece(BaseModel):
    """Cell restricted to an open level interval."""
    model_config = ConfigDict(frozen=True)

    cell: str  # c<index> for chart cells, y<index> for cylinder cells
    lower: float
    upper: float


class Pack(BaseModel):
    """Family of closed broken trajectories sweeping a topological cylinder."""
    id: int
    pieces: List[PackPiece]
    lower: float
    upper: float
    cylinder: Optional[str] = None
    length_sup: Optional[float] = None


class ClauseResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""
    value: Optional[float] = None


class ValidationReport(BaseModel):
    """Per-clause outcome of a structure check."""
    clauses: List[ClauseResult]
    length_sup: Optional[float] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def clause(self, name: str) -> ClauseResult:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)


class CoarsenessVerdict(BaseModel):
    relation: Literal["coarser", "finer", "equivalent", "incomparable"]
    level_equivalent: bool
    samples: int


class StrebelReport(BaseModel):
    """Output of the full pipeline."""
    structure: LevelFunction
    validation: ValidationReport
    packs: List[Pack] = []
    tiles: int = 0
