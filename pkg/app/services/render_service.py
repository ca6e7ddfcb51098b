"""
Service for SVG figures: scenes built from documents and emitted through
the jinja2 template.

SVG has y pointing down; scene coordinates are flipped at emission.
"""
import logging
import math
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from jinja2 import Environment, FileSystemLoader

from app.core.config import settings
from app.core.exceptions import RenderError
from app.models.hs import PotentialGrid, RootMeasure, SwitchingTree
from app.models.render import LAYERS, RenderSpec, Scene, SceneDot, ScenePath
from app.models.structure import Decomposition, LevelFunction, StrebelReport
from app.models.surface import FlatSurface
from app.models.trajectory import Trajectory
from app.services.flat_model_service import developing_map, get_atlas
from app.services.level_service import LevelIndex, trace_level_curve

logger = logging.getLogger(__name__)

_env = Environment(
    loader=FileSystemLoader(str(settings.TEMPLATES_DIR)),
    autoescape=True,
    trim_blocks=True,
    lstrip_blocks=True,
)

Placement = Callable[[int, complex], complex]


def _placement(surface: Optional[FlatSurface]) -> Placement:
    """Chart point -> common frame point; identity without a surface."""
    if surface is None:
        return lambda p, z: z
    maps = developing_map(surface)
    return lambda p, z: maps[p](z) if p in maps else z


# Scene builders


def scene_from_surface(surface: FlatSurface) -> Scene:
    place = _placement(surface)
    atlas = get_atlas(surface)
    scene = Scene()
    for p, poly in enumerate(atlas.polys):
        scene.paths.append(ScenePath(layer="tiles", points=[place(p, z) for z in poly], closed=True))
    for vc in atlas.classes:
        if vc.singular:
            p, i = vc.corners[0]
            scene.dots.append(SceneDot(layer="critical_graph", z=place(p, atlas.polys[p][i]), label=vc.label))
    return scene


def scene_from_trajectories(trajectories: Sequence[Trajectory], surface: Optional[FlatSurface] = None) -> Scene:
    place = _placement(surface)
    scene = scene_from_surface(surface) if surface is not None else Scene()
    for trajectory in trajectories:
        layer = "critical_graph" if trajectory.source else "trajectories"
        stroke = "ordinary" if trajectory.source else "thin"
        run: List[complex] = []
        for seg in trajectory.segments:
            a, b = place(seg.polygon, seg.start), place(seg.polygon, seg.end)
            if run and abs(run[-1] - a) > 1e-9 * max(1.0, abs(a)):
                scene.paths.append(ScenePath(layer=layer, points=run, stroke=stroke))
                run = []
            if not run:
                run.append(a)
            run.append(b)
        if len(run) >= 2:
            scene.paths.append(ScenePath(layer=layer, points=run, stroke=stroke))
    return scene


def scene_from_structure(structure: LevelFunction, surface: Optional[FlatSurface] = None,
                         curves: int = 12) -> Scene:
    """Cells, switching set (special segments thick) and a few level curves."""
    place = _placement(surface)
    scene = Scene()
    for cell in structure.cells:
        scene.paths.append(ScenePath(layer="tiles", points=[place(cell.chart, z) for z in cell.vertices], closed=True))
    for seg in structure.segments:
        stroke = "special" if seg.kind == "special" else "ordinary"
        scene.paths.append(ScenePath(layer="switching_set", stroke=stroke,
                                     points=[place(seg.chart, seg.start), place(seg.chart, seg.end)]))
    for node in structure.nodes:
        if node.tag != "regular":
            scene.dots.append(SceneDot(layer="switching_set", z=place(node.chart, node.z),
                                       label=node.label if node.tag == "singular" else None))
    if curves and structure.cells:
        index = LevelIndex(structure, surface)
        step = max(1, len(structure.cells) // curves)
        for cell in structure.cells[::step][:curves]:
            verts = [complex(z) for z in cell.vertices]
            curve = trace_level_curve(structure, cell.chart, sum(verts) / len(verts), surface, index=index)
            run: List[complex] = []
            for p, z in curve.points:
                w = place(p, z)
                if run and abs(run[-1] - w) > 0.5 * index.scale:
                    scene.paths.append(ScenePath(layer="trajectories", points=run, stroke="thin"))
                    run = []
                run.append(w)
            if len(run) >= 2:
                scene.paths.append(ScenePath(layer="trajectories", points=run,
                                             stroke="special" if curve.special else "thin"))
    return scene


def scene_from_decomposition(decomposition: Decomposition) -> Scene:
    """Tiles of every component, components laid out left to right."""
    scene = Scene()
    offset = 0.0
    for component in decomposition.components:
        tiles = [t for t in decomposition.tiles if t.component == component.index and t.vertices]
        points = [complex(z) for t in tiles for z in t.vertices]
        if not points:
            continue
        left = min(z.real for z in points)
        width = max(z.real for z in points) - left
        for tile in tiles:
            scene.paths.append(ScenePath(layer="tiles", closed=True,
                                         points=[complex(z) - left + offset for z in tile.vertices]))
        offset += width * 1.15 + 1e-9
    return scene


def scene_from_measure(measure: RootMeasure, tree: Optional[SwitchingTree] = None) -> Scene:
    scene = Scene(dots=[SceneDot(layer="atoms", z=a) for a in measure.atoms])
    if tree is not None:
        for edge in tree.edges:
            scene.paths.append(ScenePath(layer="switching_set", points=[tree.nodes[edge.a].z, tree.nodes[edge.b].z]))
    return scene


def scene_from_document(doc: Dict[str, Any], surface: Optional[FlatSurface] = None) -> Scene:
    """
    Build a scene from any exported document.

    Raises:
        RenderError: the document kind is not recognised
    """
    if "structure" in doc and "validation" in doc:
        return scene_from_structure(StrebelReport.model_validate(doc).structure, surface)
    if "cells" in doc:
        return scene_from_structure(LevelFunction.model_validate(doc), surface)
    if "components" in doc:
        return scene_from_decomposition(Decomposition.model_validate(doc))
    if "trajectories" in doc:
        return scene_from_trajectories([Trajectory.model_validate(t) for t in doc["trajectories"]], surface)
    if "segments" in doc and "termination" in doc:
        return scene_from_trajectories([Trajectory.model_validate(doc)], surface)
    if "atoms" in doc:
        tree = SwitchingTree.model_validate(doc["tree"]) if doc.get("tree") else None
        return scene_from_measure(RootMeasure.model_validate(doc), tree)
    if "values" in doc and "window" in doc:
        return Scene(raster=PotentialGrid.model_validate(doc))
    if "polygons" in doc:
        return scene_from_surface(FlatSurface.model_validate(doc))
    raise RenderError(f"cannot render a document with keys {sorted(doc)[:8]}")


# Emission


def marching_squares(values: np.ndarray, xs: np.ndarray, ys: np.ndarray, level: float) -> List[Tuple[complex, complex]]:
    """Segments of the level set of a grid function, rows indexed by ys."""
    segments = []
    for j in range(len(ys) - 1):
        for i in range(len(xs) - 1):
            corners = [
                (complex(xs[i], ys[j]), values[j, i]),
                (complex(xs[i + 1], ys[j]), values[j, i + 1]),
                (complex(xs[i + 1], ys[j + 1]), values[j + 1, i + 1]),
                (complex(xs[i], ys[j + 1]), values[j + 1, i]),
            ]
            crossings = []
            for (za, va), (zb, vb) in zip(corners, corners[1:] + corners[:1]):
                if (va - level) * (vb - level) < 0:
                    crossings.append(za + (level - va) / (vb - va) * (zb - za))
            if len(crossings) == 2:
                segments.append((crossings[0], crossings[1]))
            elif len(crossings) == 4:
                # saddle: pair the crossings by the cell average
                center = sum(v for _, v in corners) / 4
                if (center - level) * (corners[0][1] - level) > 0:
                    segments += [(crossings[0], crossings[1]), (crossings[2], crossings[3])]
                else:
                    segments += [(crossings[3], crossings[0]), (crossings[1], crossings[2])]
    return segments


def _bounds(scene: Scene) -> Tuple[float, float, float, float]:
    points = [complex(z) for path in scene.paths for z in path.points] + [complex(d.z) for d in scene.dots]
    if scene.raster is not None:
        xmin, xmax, ymin, ymax = scene.raster.window
        points += [complex(xmin, ymin), complex(xmax, ymax)]
    if not points:
        return -1.0, 1.0, -1.0, 1.0
    xmin, xmax = min(z.real for z in points), max(z.real for z in points)
    ymin, ymax = min(z.imag for z in points), max(z.imag for z in points)
    pad = 0.05 * max(xmax - xmin, ymax - ymin, 1e-9)
    return xmin - pad, xmax + pad, ymin - pad, ymax + pad


def _check_finite(scene: Scene) -> None:
    for path in scene.paths:
        for z in path.points:
            if not (math.isfinite(z.real) and math.isfinite(z.imag)):
                raise RenderError(f"non-finite coordinate {z} in a {path.layer} path")
    for dot in scene.dots:
        if not (math.isfinite(dot.z.real) and math.isfinite(dot.z.imag)):
            raise RenderError(f"non-finite coordinate {dot.z} in the {dot.layer} layer")


def _color(t: float) -> str:
    """Blue through white to red for t in [0, 1]."""
    t = min(1.0, max(0.0, t))
    if t < 0.5:
        s = t / 0.5
        r, g, b = 40 + 215 * s, 80 + 175 * s, 200 + 55 * s
    else:
        s = (t - 0.5) / 0.5
        r, g, b = 255 - 20 * s, 255 - 195 * s, 255 - 215 * s
    return f"#{int(r):02x}{int(g):02x}{int(b):02x}"


def emit_svg(scene: Scene, spec: RenderSpec) -> str:
    """
    Layered SVG document of a scene.

    Raises:
        RenderError: non-finite coordinates
    """
    _check_finite(scene)
    xmin, xmax, ymin, ymax = spec.window or _bounds(scene)
    scale = min(spec.width / (xmax - xmin), spec.height / (ymax - ymin))

    def to_svg(z: complex) -> Tuple[float, float]:
        return round((z.real - xmin) * scale, 3), round(spec.height - (z.imag - ymin) * scale, 3)

    def d_of(points: Sequence[complex], closed: bool) -> str:
        coords = [to_svg(complex(z)) for z in points]
        text = " ".join(("M" if n == 0 else "L") + f"{x} {y}" for n, (x, y) in enumerate(coords))
        return text + (" Z" if closed else "")

    groups = []
    for layer in LAYERS:
        if not spec.enabled(layer):
            continue
        group: Dict[str, Any] = {"name": layer, "cells": [], "paths": [], "dots": []}
        for path in scene.paths:
            if path.layer == layer:
                css = "tile" if layer == "tiles" and path.closed else path.stroke
                group["paths"].append({"css": css, "d": d_of(path.points, path.closed)})
        for dot in scene.dots:
            if dot.layer == layer:
                x, y = to_svg(complex(dot.z))
                group["dots"].append({"x": x, "y": y, "label": dot.label})
        if layer == "potential" and scene.raster is not None:
            grid = scene.raster
            values = np.asarray(grid.values)
            lo, hi = np.percentile(values, 5), np.percentile(values, 95)
            dx, dy = grid.spacing
            for j in range(grid.height):
                for i in range(grid.width):
                    x, y = to_svg(grid.node(i, j) + complex(-dx / 2, dy / 2))
                    group["cells"].append({
                        "x": x, "y": y, "w": round(dx * scale, 3), "h": round(dy * scale, 3),
                        "color": _color((values[j, i] - lo) / (hi - lo) if hi > lo else 0.5),
                    })
            xs = grid.window[0] + dx * np.arange(grid.width)
            ys = grid.window[2] + dy * np.arange(grid.height)
            for level in np.linspace(lo, hi, spec.contours + 2)[1:-1] if spec.contours else []:
                for a, b in marching_squares(values, xs, ys, float(level)):
                    group["paths"].append({"css": "contour", "d": d_of([a, b], False)})
        groups.append(group)
    document = _env.get_template("scene.svg.j2").render(width=spec.width, height=spec.height, groups=groups)
    logger.debug(f"Rendered {len(scene.paths)} paths and {len(scene.dots)} dots")
    return document
