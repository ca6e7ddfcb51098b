"""
Pydantic models for SVG scenes.
"""
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from app.models.common import ComplexPair
from app.models.hs import PotentialGrid

Layer = Literal["trajectories", "critical_graph", "switching_set", "tiles", "atoms", "potential"]
LAYERS: Tuple[str, ...] = ("tiles", "potential", "trajectories", "critical_graph", "switching_set", "atoms")


class RenderSpec(BaseModel):
    """Which layers to draw and where."""
    trajectories: bool = True
    critical_graph: bool = True
    switching_set: bool = True
    tiles: bool = True
    atoms: bool = True
    potential: bool = True
    window: Optional[Tuple[float, float, float, float]] = None  # xmin, xmax, ymin, ymax
    width: int = Field(default=640, gt=0)
    height: int = Field(default=640, gt=0)
    contours: int = Field(default=12, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if not any(getattr(self, name) for name in LAYERS):
            raise ValueError("at least one layer must be enabled")
        if self.window is not None:
            xmin, xmax, ymin, ymax = self.window
            if not (xmax > xmin and ymax > ymin):
                raise ValueError(f"window {self.window} is empty")
        return self

    def enabled(self, layer: str) -> bool:
        return bool(getattr(self, layer))


class ScenePath(BaseModel):
    layer: Layer
    points: List[ComplexPair]
    stroke: Literal["ordinary", "special", "thin"] = "ordinary"
    closed: bool = False


class SceneDot(BaseModel):
    layer: Layer
    z: ComplexPair
    label: Optional[str] = None


class Scene(BaseModel):
    """Geometry in one plane frame."""
    paths: List[ScenePath] = []
    dots: List[SceneDot] = []
    raster: Optional[PotentialGrid] = None
