"""
Pydantic models for traced trajectories and holonomy.
"""
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from app.models.common import ComplexPair

TerminationKind = Literal[
    "ClosedPeriodic",
    "HitSingularity",
    "EnteredCylinder",
    "DenseDetected",
    "LengthBudgetExhausted",
    "LeftSurface",
]


class SurfacePoint(BaseModel):
    """Point in the chart of one polygon."""
    model_config = ConfigDict(frozen=True)

    polygon: int = Field(ge=0)
    z: ComplexPair


class ChartSegment(BaseModel):
    """Straight piece of a trajectory inside one chart."""
    model_config = ConfigDict(frozen=True)

    polygon: int  # -1 for z-plane traces of a differential
    start: ComplexPair
    end: ComplexPair
    cumulative: float  # canonical length at the end of the segment


class Termination(BaseModel):
    """Why tracing stopped."""
    model_config = ConfigDict(frozen=True)

    kind: TerminationKind
    period: Optional[float] = None  # ClosedPeriodic
    label: Optional[str] = None  # HitSingularity / EnteredCylinder
    domain: List[int] = []  # DenseDetected: polygons whose grid cells were all revisited


class Trajectory(BaseModel):
    """Horizontal trajectory traced from a seed."""
    model_config = ConfigDict(frozen=True)

    start: SurfacePoint
    branch: int
    direction: ComplexPair  # unit chart direction at the start
    segments: List[ChartSegment] = []
    termination: Termination
    length: float = 0.0
    source: Optional[str] = None  # singularity label for critical rays
    incoming: bool = False  # traced backwards into the source


class HolonomyElement(BaseModel):
    """zeta^index in G_k."""
    model_config = ConfigDict(frozen=True)

    k: int
    index: int

    def __add__(self, other: "HolonomyElement") -> "HolonomyElement":
        return HolonomyElement(k=self.k, index=(self.index + other.index) % self.k)


class HolonomyGroup(BaseModel):
    """Subgroup of G_k generated by zeta^generator, generator dividing k."""
    model_config = ConfigDict(frozen=True)

    k: int
    generator: int  # k for the trivial group

    @property
    def order(self) -> int:
        return self.k // self.generator

    @property
    def trivial(self) -> bool:
        return self.order == 1

    @property
    def elements(self) -> List[int]:
        return list(range(0, self.k, self.generator))


class PowerReduction(BaseModel):
    """Whether Psi is a global k-th power of a 1-form or a k/2-th power of a quadratic differential."""
    kind: Literal["FullForm", "HalfForm", "None"]
    group: HolonomyGroup


class LoopLeg(BaseModel):
    """Part of a closed path inside one chart."""
    polygon: int
    points: List[ComplexPair]


class TrajectorySeed(BaseModel):
    """Seed of a batch trace."""
    polygon: int
    z: ComplexPair
    branch: int = 0
    dual: bool = False


class TerminationSummary(BaseModel):
    """Frequency of termination tags over a batch."""
    total: int
    counts: Dict[str, int]
    budget_exhausted: List[int] = []  # indices of trajectories that ran out of length


# Canonical point key used by switching graphs: (polygon, rounded re, rounded im)
PointKey = Tuple[int, float, float]
