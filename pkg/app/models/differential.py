"""
Pydantic models for rational k-differentials and their singularities.
"""
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.common import ComplexPair


class DivisorPoint(BaseModel):
    """A zero or pole of R with its positive multiplicity."""
    model_config = ConfigDict(frozen=True)

    z: ComplexPair
    m: int = Field(gt=0)


class RationalKDifferential(BaseModel):
    """Psi = R(z) dz^k on the sphere; infinity is never listed."""
    model_config = ConfigDict(frozen=True)

    k: int = Field(ge=2)
    leading: ComplexPair
    zeros: List[DivisorPoint] = []
    poles: List[DivisorPoint] = []

    @model_validator(mode="after")
    def _check_divisor(self):
        if self.leading == 0:
            raise ValueError("leading coefficient must be nonzero")
        positions = [p.z for p in self.zeros] + [p.z for p in self.poles]
        for i, a in enumerate(positions):
            for b in positions[i + 1:]:
                if abs(a - b) <= 1e-12 * max(1.0, abs(a)):
                    raise ValueError(f"duplicate position {a}")
        return self

    @property
    def finite_points(self) -> List[tuple]:
        """(position, signed order) for every finite zero and pole."""
        return [(p.z, p.m) for p in self.zeros] + [(p.z, -p.m) for p in self.poles]

    @property
    def order_at_infinity(self) -> int:
        degree = sum(p.m for p in self.zeros) - sum(p.m for p in self.poles)
        return -2 * self.k - degree


class Singularity(BaseModel):
    """One zero or pole of Psi, infinity included."""
    model_config = ConfigDict(frozen=True)

    label: str
    position: Optional[ComplexPair] = None  # None marks infinity
    order: int
    conical: bool
    cone_angle: Optional[float] = None  # (m+k)*2pi/k when conical
    residue: Optional[ComplexPair] = None  # only for order -k

    @property
    def at_infinity(self) -> bool:
        return self.position is None


class NormalForm(BaseModel):
    """Local normal form type and its invariant."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["PowerForm", "ResidueForm", "HigherPoleForm"]
    m: int
    r: Optional[ComplexPair] = None
    s: Optional[ComplexPair] = None


class AdmissibilityReport(BaseModel):
    """Verdict of the admissibility rules with the failing reasons."""
    admissible: bool
    reasons: List[str] = []
