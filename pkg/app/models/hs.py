"""
Pydantic models for Heine-Stieltjes spectral problems and root measures.
"""
import math
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.common import ComplexPair


def falling_factorial(n: int, k: int) -> int:
    """(n)_k = n(n-1)...(n-k+1)."""
    return math.prod(range(n - k + 1, n + 1)) if n >= k else 0


class HSProblem(BaseModel):
    """Q(z) S^(k) = (n)_k V(z) S(z) with Q monic of degree l >= k."""
    model_config = ConfigDict(frozen=True)

    k: int = Field(ge=2)
    n: int = Field(ge=0)
    Q: List[ComplexPair]  # coefficients, low -> high

    @model_validator(mode="after")
    def _check_q(self):
        if len(self.Q) < 2:
            raise ValueError("Q must be nonconstant")
        if abs(self.Q[-1] - 1) > 1e-12:
            raise ValueError(f"Q must be monic, leading coefficient is {self.Q[-1]}")
        if self.degree < self.k:
            raise ValueError(f"deg Q = {self.degree} is below k = {self.k}")
        return self

    @property
    def degree(self) -> int:
        return len(self.Q) - 1

    @property
    def pochhammer(self) -> int:
        return falling_factorial(self.n, self.k)

    @property
    def exactly_solvable(self) -> bool:
        return self.degree == self.k

    @property
    def target_count(self) -> int:
        """Number of pairs counted with multiplicity."""
        return math.comb(self.n + self.degree - self.k, self.degree - self.k)


class HSPair(BaseModel):
    """Van Vleck V and Stieltjes S, both monic, coefficients low -> high."""
    model_config = ConfigDict(frozen=True)

    V: List[ComplexPair]
    S: List[ComplexPair]
    residual: float = 0.0
    multiplicity: int = 1  # >= 2 when near-coincident solutions were merged


class HSSolution(BaseModel):
    """All pairs found for one problem."""
    problem: HSProblem
    pairs: List[HSPair]
    target: int
    found: int
    multiplicity_suspected: bool = False
    diverged: int = 0  # seeds that did not converge


class HSVerification(BaseModel):
    """Residual and convex-hull localisation of a pair."""
    residual_coefficients: List[ComplexPair]
    residual: float
    scale: float
    v_in_hull: bool
    s_in_hull: bool
    tol: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol * self.scale and self.v_in_hull and self.s_in_hull


class RootMeasure(BaseModel):
    """Uniform probability measure on the roots of S."""
    model_config = ConfigDict(frozen=True)

    atoms: List[ComplexPair]

    @property
    def weight(self) -> float:
        return 1.0 / len(self.atoms) if self.atoms else 0.0

    @property
    def mass(self) -> float:
        return self.weight * len(self.atoms)


class CauchyPowerReport(BaseModel):
    """Relative errors |C^k - V/Q| / |V/Q| at sample points."""
    n: int
    points: List[ComplexPair]
    errors: List[float]
    max_error: float
    median_error: float


class ContinuationStep(BaseModel):
    n: int
    V: List[ComplexPair]
    max_error: Optional[float] = None


class PotentialGrid(BaseModel):
    """Logarithmic potential sampled on a rectangular grid, rows bottom to top."""
    window: Tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    width: int
    height: int
    values: List[List[float]]
    density: List[List[float]] = []  # interior nodes, mass per cell
    jittered: bool = False

    @property
    def spacing(self) -> Tuple[float, float]:
        xmin, xmax, ymin, ymax = self.window
        return (xmax - xmin) / (self.width - 1), (ymax - ymin) / (self.height - 1)

    def node(self, i: int, j: int) -> complex:
        """Position of column i, row j."""
        dx, dy = self.spacing
        return complex(self.window[0] + i * dx, self.window[2] + j * dy)


class PositivityReport(BaseModel):
    min_density: float
    total_mass: float
    boundary_deviation: float  # max relative |u - log|z|| on the window boundary
    exclusion_radius: float
    passed: bool


class TreeNode(BaseModel):
    z: ComplexPair
    valency: int


class TreeEdge(BaseModel):
    a: int
    b: int
    direction_error: float  # distance to the nearest trajectory direction of the differential or its dual


class SwitchingTree(BaseModel):
    """Skeleton of the support of a root measure."""
    nodes: List[TreeNode]
    edges: List[TreeEdge]
    is_forest: bool
    leaves: List[ComplexPair] = []
