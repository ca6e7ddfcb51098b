"""
Service for ps-level functions: tile fills, placement of cells in charts,
assembly with matched offsets, switching sets and level-curve tracing.
"""
import hashlib
import logging
import math
from collections import deque
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import shapely
from shapely.geometry import Point as ShapelyPoint
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.geometry.polygon import orient

from app.core.config import settings
from app.core.exceptions import DecompositionError
from app.models.structure import (
    Component,
    CylinderCell,
    Decomposition,
    LevelCell,
    LevelCurve,
    LevelFunction,
    Node,
    SwitchingSegment,
    Tile,
)
from app.models.surface import FlatSurface
from app.services import batch_service
from app.services.decompose_service import split_trapezoid
from app.services.flat_model_service import Atlas, Transition, get_atlas
from app.utils.geometry import (
    clip_halfplane,
    convex_exit,
    cross,
    dot,
    is_convex,
    polygon_diameter,
    remove_collinear,
    signed_area,
    zeta,
)

logger = logging.getLogger(__name__)

GRADIENT_MATCH = 1e-7


def surface_digest(surface: FlatSurface) -> str:
    """Stable identifier of a surface's polygons and gluings."""
    payload = surface.model_dump_json(include={"k", "polygons", "gluings", "cylinders"})
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()


# Tile fills


def _orientation_sign(vertices: Sequence[complex], k: int, tol: float = 1e-6) -> int:
    """+1 when the sides run along zeta^j, -1 when along -zeta^j (odd k only)."""
    if k % 2 == 0:
        return 1
    signs = set()
    n = len(vertices)
    for i in range(n):
        d = vertices[(i + 1) % n] - vertices[i]
        if abs(d) <= tol:
            continue
        j = math.atan2(d.imag, d.real) * k / (2 * math.pi)
        if abs(j - round(j)) <= tol:
            signs.add(1)
        elif abs(j - k / 2 - round(j - k / 2)) <= tol:
            signs.add(-1)
        else:
            raise DecompositionError(f"tile side {d} is not horizontal")
    if len(signs) != 1:
        raise DecompositionError("tile sides mix both orientations of the horizontal field")
    return signs.pop()


def distance_cells(vertices: Sequence[complex], sign: int = 1, tile: int = -1, chart: int = -1) -> List[LevelCell]:
    """
    Cells of Phi = sign * (distance to the boundary) on a convex polygon.

    Each cell collects the points nearest to one side; cell boundaries are
    the bisector segments.
    """
    vertices = list(vertices)
    scale = max(1.0, polygon_diameter(vertices))
    lines: List[Tuple[complex, float]] = []
    n = len(vertices)
    for i in range(n):
        a, b = vertices[i], vertices[(i + 1) % n]
        if abs(b - a) <= 1e-12 * scale:
            continue
        normal = 1j * (b - a) / abs(b - a)
        level = dot(normal, a)
        if not any(abs(normal - m) <= 1e-9 and abs(level - c) <= 1e-9 * scale for m, c in lines):
            lines.append((normal, level))
    cells: List[LevelCell] = []
    for i, (normal, level) in enumerate(lines):
        piece = vertices
        for j, (other, other_level) in enumerate(lines):
            if j == i:
                continue
            # dist_i <= dist_j
            piece = clip_halfplane(piece, normal - other, level - other_level)
            if len(piece) < 3:
                break
        if len(piece) < 3 or signed_area(piece) <= 1e-14 * scale * scale:
            continue
        cells.append(LevelCell(
            chart=chart, vertices=piece, gradient=sign * normal, offset=-sign * level, tile=tile,
        ))
    return cells


def _parallel_sides(corners: List[complex]) -> Optional[complex]:
    n = len(corners)
    for i in range(n):
        a = corners[(i + 1) % n] - corners[i]
        b = corners[(i + 3) % n] - corners[(i + 2) % n]
        if abs(cross(a, b)) <= 1e-9 * abs(a) * abs(b):
            return a / abs(a)
    return None


def fill_tile(tile: Tile, k: int) -> List[LevelCell]:
    """
    Level cells of one tile in the frame of its component.

    Triangles get the distance-to-boundary function, whose switching set is
    the three bisector segments through the incenter. Trapezoids are split
    into a symmetric trapezoid along the left leg and a triangle, each
    filled the same way.

    Raises:
        DecompositionError: degenerate tile or sides mixing both orientations
    """
    vertices = [complex(z) for z in tile.vertices]
    if tile.kind == "Cylinder":
        return []
    scale = max(1.0, polygon_diameter(vertices)) if vertices else 1.0
    if len(vertices) < 3 or signed_area(vertices) <= 1e-12 * scale * scale:
        raise DecompositionError(f"tile {tile.index} is degenerate")
    sign = _orientation_sign(vertices, k)
    if tile.kind == "Triangle":
        return distance_cells(vertices, sign, tile.index)
    tol = 1e-9 * scale
    corners = remove_collinear(vertices, [], tol)
    unit = _parallel_sides(corners) if len(corners) == 4 else None
    if unit is None:
        return distance_cells(vertices, sign, tile.index)
    cells: List[LevelCell] = []
    for part in split_trapezoid([z / unit for z in corners], tol):
        cells.extend(distance_cells([z * unit for z in part], sign, tile.index))
    return cells


def fill_tiles(tiles: Sequence[Tile], k: int, workers: Optional[int] = None) -> List[List[LevelCell]]:
    """Fill tiles concurrently; results in tile order."""
    return batch_service.run_batch(lambda tile: fill_tile(tile, k), list(tiles), workers)


# Cells in charts


def _to_chart(vertices: Sequence[complex], gradient: complex, offset: float, placement: Transition,
              chart: int, tile: int) -> LevelCell:
    """Pull a frame cell back along chart -> frame placement x -> zeta^r x + t."""
    back = placement.inverse()
    return LevelCell(
        chart=chart,
        vertices=[back(z) for z in vertices],
        gradient=gradient * zeta(placement.k, -placement.rot),
        offset=offset + dot(gradient, placement.shift),
        tile=tile,
    )


def _placement(k: int, face) -> Transition:
    return Transition(k, face.rot, complex(face.shift))


def place_cells(atlas: Atlas, component: Component, frame_cells: Sequence[LevelCell]) -> List[LevelCell]:
    """
    Intersect frame cells with the developed faces of a component and pull
    the pieces back to their charts.

    Raises:
        DecompositionError: a piece is not convex
    """
    k = atlas.k
    tol = 1e-9 * max(1.0, atlas.diameter)
    result: List[LevelCell] = []
    for face in component.faces:
        placement = _placement(k, face)
        developed = ShapelyPolygon([(z.real, z.imag) for z in (placement(complex(v)) for v in face.vertices)])
        for cell in frame_cells:
            shape = ShapelyPolygon([(z.real, z.imag) for z in cell.vertices])
            if not shape.intersects(developed):
                continue
            overlap = shape.intersection(developed)
            for part in shapely.get_parts(overlap):
                if part.geom_type != "Polygon" or part.area <= tol * tol:
                    continue
                part = orient(part, 1.0)
                vertices = remove_collinear([complex(x, y) for x, y in part.exterior.coords[:-1]], [], tol)
                if len(vertices) < 3:
                    continue
                if not is_convex(vertices, 1e-9):
                    raise DecompositionError(f"cell piece in chart {face.polygon} is not convex")
                result.append(_to_chart(vertices, complex(cell.gradient), cell.offset, placement,
                                        face.polygon, cell.tile))
    return result


def cylinder_component_cells(atlas: Atlas, component: Component, tile: int) -> List[LevelCell]:
    """
    Cells of a finite cylinder component.

    With no infinite cylinder attached the profile is the tent min(h, H - h)
    across the height h; otherwise Phi is monotone in h so that it continues
    into the attached cylinders.

    Raises:
        DecompositionError: a tent is needed for odd k
    """
    k = atlas.k
    tol = 1e-9 * max(1.0, atlas.diameter)
    unit = complex(component.deck) / abs(complex(component.deck))
    normal = 1j * unit  # gradient of the height h = cross(unit, x)
    frames = []
    heights: List[float] = []
    attached = False
    for face in component.faces:
        placement = _placement(k, face)
        verts = [complex(v) for v in face.vertices]
        frames.append((face, placement, [placement(v) for v in verts]))
        heights.extend(cross(unit, placement(v)) for v in verts)
        for i in range(len(atlas.polys[face.polygon])):
            info = atlas.edges[(face.polygon, i)]
            if info.kind != "boundary" or info.label is None:
                continue
            if any(_collinear_overlap(info.start, info.end, a, b, tol) for a, b in _edges(verts)):
                attached = True
    low, high = min(heights), max(heights)
    middle = 0.5 * (low + high)
    result: List[LevelCell] = []
    if attached:
        sign = 1
        if k % 2 == 1 and LevelCell(chart=0, vertices=[0j, 1, 1j], gradient=normal).branch(k)[1] > 1e-6:
            sign = -1
        for face, placement, developed in frames:
            result.append(_to_chart(developed, sign * normal, -sign * low, placement, face.polygon, tile))
        return result
    if k % 2 == 1:
        raise DecompositionError(f"cylinder component {component.index} needs a tent profile, impossible for odd k")
    for face, placement, developed in frames:
        for gradient, offset, normal_clip, level_clip in (
            (normal, -low, normal, middle),
            (-normal, high, -normal, -middle),
        ):
            piece = clip_halfplane(developed, normal_clip, level_clip)
            if len(piece) >= 3 and signed_area(piece) > tol * tol:
                result.append(_to_chart(piece, gradient, offset, placement, face.polygon, tile))
    return result


def _cell_containing(cells: Sequence[LevelCell], p: int, z: complex, tol: float) -> Optional[int]:
    point = ShapelyPoint(z.real, z.imag)
    best, best_dist = None, math.inf
    for index, cell in enumerate(cells):
        if cell.chart != p:
            continue
        dist = ShapelyPolygon([(v.real, v.imag) for v in cell.vertices]).distance(point)
        if dist < best_dist:
            best, best_dist = index, dist
    return best if best_dist <= tol else None


def cylinder_cells(surface: FlatSurface, cells: Sequence[LevelCell]) -> List[CylinderCell]:
    """
    Extend Phi into every infinite cylinder.

    The sign follows the adjacent cells when their gradient is normal to the
    loop, otherwise the branch-valid direction; the offset is Phi on the loop.

    Raises:
        DecompositionError: the loop is not a level curve or the signs conflict
    """
    atlas = get_atlas(surface)
    k = surface.k
    tol = 1e-7 * max(1.0, atlas.diameter)
    result: List[CylinderCell] = []
    for c, cylinder in enumerate(surface.cylinders):
        votes = set()
        values: List[float] = []
        normals: List[complex] = []
        for ref in cylinder.edges:
            info = atlas.edges[tuple(ref)]
            outward = -1j * info.vector / info.length
            normals.append(outward)
            for s in (0.25, 0.5, 0.75):
                m = info.start + s * info.vector
                index = _cell_containing(cells, info.ref[0], m - 1e-6 * info.length * outward, tol)
                if index is None:
                    raise DecompositionError(f"no cell along the loop of {cylinder.label}")
                cell = cells[index]
                values.append(cell.value(m))
                g = complex(cell.gradient)
                if abs(g - outward) <= GRADIENT_MATCH:
                    votes.add(1)
                elif abs(g + outward) <= GRADIENT_MATCH:
                    votes.add(-1)
        if max(values) - min(values) > tol:
            raise DecompositionError(f"the loop of {cylinder.label} is not a level curve")
        if len(votes) > 1:
            raise DecompositionError(f"cells along the loop of {cylinder.label} disagree on the side")
        if votes:
            sign = votes.pop()
        else:
            sign = 1
            probe = [LevelCell(chart=0, vertices=[0j, 1, 1j], gradient=n).branch(k)[1] for n in normals]
            if max(probe) > settings.GRADIENT_ANGLE_TOL:
                sign = -1
        result.append(CylinderCell(
            cylinder=c, label=cylinder.label, sign=sign, offset=sum(values) / len(values),
            circumference=cylinder.circumference,
        ))
    return result


# Shared boundaries and switching sets


class Shared(NamedTuple):
    """Stretch shared by cells a and b, in the chart of a; b's gradient and offset pulled into that chart."""
    a: int
    b: int
    chart: int
    start: complex
    end: complex
    gradient: complex
    offset: float


def _collinear_overlap(a0: complex, a1: complex, b0: complex, b1: complex,
                       tol: float) -> Optional[Tuple[complex, complex]]:
    d = a1 - a0
    length = abs(d)
    if length <= tol:
        return None
    u = d / length
    if abs(cross(u, b0 - a0)) > tol or abs(cross(u, b1 - a0)) > tol:
        return None
    s0, s1 = dot(u, b0 - a0), dot(u, b1 - a0)
    lo, hi = max(0.0, min(s0, s1)), min(length, max(s0, s1))
    if hi - lo <= tol:
        return None
    return a0 + lo * u, a0 + hi * u


def _edges(vertices: Sequence[complex]) -> List[Tuple[complex, complex]]:
    return list(zip(vertices, list(vertices[1:]) + [vertices[0]]))


def shared_segments(cells: Sequence[LevelCell], atlas: Optional[Atlas] = None,
                    tol: Optional[float] = None) -> List[Shared]:
    """Stretches of boundary shared by two cells, inside a chart or across a gluing."""
    scale = max(1.0, atlas.diameter) if atlas is not None else 1.0
    tol = tol or 1e-8 * scale
    verts = [[complex(z) for z in cell.vertices] for cell in cells]
    by_chart: Dict[int, List[int]] = {}
    for index, cell in enumerate(cells):
        by_chart.setdefault(cell.chart, []).append(index)
    result: List[Shared] = []
    for p, members in by_chart.items():
        shapes = [ShapelyPolygon([(z.real, z.imag) for z in verts[i]]) for i in members]
        tree = shapely.STRtree(shapes)
        for pos, a in enumerate(members):
            for other in tree.query(shapes[pos].buffer(tol)):
                b = members[int(other)]
                if b <= a:
                    continue
                for a0, a1 in _edges(verts[a]):
                    for b0, b1 in _edges(verts[b]):
                        overlap = _collinear_overlap(a0, a1, b0, b1, tol)
                        if overlap is not None:
                            result.append(Shared(a, b, p, overlap[0], overlap[1],
                                                 complex(cells[b].gradient), cells[b].offset))
    if atlas is None:
        return result
    for a, cell in enumerate(cells):
        p = cell.chart
        for a0, a1 in _edges(verts[a]):
            for i in range(len(atlas.polys[p])):
                info = atlas.edges[(p, i)]
                if info.kind != "glued" or info.side != "a":
                    continue
                on_edge = _collinear_overlap(info.start, info.end, a0, a1, tol)
                if on_edge is None:
                    continue
                q = info.partner[0]
                back = info.transition.inverse()
                rot = info.transition.rot
                for b in by_chart.get(q, []):
                    pulled = [back(z) for z in verts[b]]
                    for b0, b1 in _edges(pulled):
                        overlap = _collinear_overlap(a0, a1, b0, b1, tol)
                        if overlap is None:
                            continue
                        g_q = complex(cells[b].gradient)
                        result.append(Shared(
                            a, b, p, overlap[0], overlap[1],
                            g_q * zeta(atlas.k, -rot), cells[b].offset + dot(g_q, info.transition.shift),
                        ))
    return result


def _node_key(atlas: Optional[Atlas], p: int, z: complex) -> Tuple:
    if atlas is not None:
        return atlas.canonical(p, z)
    quantum = 1e-7
    return ("i", p, round(z.real / quantum), round(z.imag / quantum))


def switching_set(cells: Sequence[LevelCell], atlas: Optional[Atlas] = None,
                  shared: Optional[Sequence[Shared]] = None) -> Tuple[List[SwitchingSegment], List[Node]]:
    """
    Switching segments and their nodes.

    Boundaries between cells with equal gradients are smooth and skipped;
    opposite gradients give special segments (ridges and valleys of Phi).
    Nodes are the endpoints of switching segments with their valency.
    """
    shared = shared if shared is not None else shared_segments(cells, atlas)
    segments: List[SwitchingSegment] = []
    ends: Dict[Tuple, List[Tuple[int, complex, float]]] = {}
    for item in shared:
        g_a = complex(cells[item.a].gradient)
        if abs(g_a - item.gradient) <= GRADIENT_MATCH:
            continue
        if abs(g_a + item.gradient) <= GRADIENT_MATCH:
            level = cells[item.a].value(0.5 * (item.start + item.end))
            segments.append(SwitchingSegment(chart=item.chart, start=item.start, end=item.end,
                                             kind="special", level=level))
            continue
        segments.append(SwitchingSegment(chart=item.chart, start=item.start, end=item.end))
        for z in (item.start, item.end):
            ends.setdefault(_node_key(atlas, item.chart, z), []).append((item.chart, z, cells[item.a].value(z)))
    nodes: List[Node] = []
    for key, entries in sorted(ends.items(), key=lambda item: str(item[0])):
        chart, z, level = entries[0]
        label, order, tag = None, None, "regular"
        if atlas is not None and key[0] == "v":
            vc = atlas.classes[key[1]]
            label, order = vc.label, vc.order
            if vc.singular:
                tag = "singular"
        if tag != "singular" and len(entries) >= 3:
            tag = "secondary"
        nodes.append(Node(key=str(key), chart=chart, z=z, valency=len(entries), label=label,
                          order=order, tag=tag, level=level))
    return segments, nodes


def assemble_level_function(fragments: Sequence[Sequence[LevelCell]], surface: Optional[FlatSurface] = None,
                            cylinders: Optional[Sequence[Tile]] = None,
                            tiles: Optional[Sequence[Tile]] = None, k: Optional[int] = None) -> LevelFunction:
    """
    Glue fragments into one continuous level function.

    Offsets are matched fragment by fragment along a breadth-first tree of
    shared boundaries; every remaining shared boundary must then agree.
    Infinite cylinders of the surface get cells continuing Phi to +-inf.

    Args:
        fragments: per tile, cells in surface charts (chart 0 without a surface)
        surface: the surface with its infinite cylinders
        cylinders: Cylinder tiles cut off before decomposing
        tiles: tiles recorded with the result

    Raises:
        DecompositionError: the offsets cannot be matched; names the fragments on the cycle
    """
    atlas = get_atlas(surface) if surface is not None else None
    scale = max(1.0, atlas.diameter) if atlas is not None else 1.0
    tol = 1e-9 * scale
    cells: List[LevelCell] = []
    owner: List[int] = []
    for f, fragment in enumerate(fragments):
        for cell in fragment:
            cells.append(cell if cell.chart >= 0 else cell.model_copy(update={"chart": 0}))
            owner.append(f)
    shared = shared_segments(cells, atlas)
    links: Dict[int, List[Tuple[int, float]]] = {f: [] for f in range(len(fragments))}
    for item in shared:
        fa, fb = owner[item.a], owner[item.b]
        if fa == fb:
            continue
        m = 0.5 * (item.start + item.end)
        diff = cells[item.a].value(m) - ((item.gradient.conjugate() * m).real + item.offset)
        links[fa].append((fb, diff))
        links[fb].append((fa, -diff))
    shift: Dict[int, float] = {}
    parent: Dict[int, Optional[int]] = {}
    for root in range(len(fragments)):
        if root in shift:
            continue
        shift[root], parent[root] = 0.0, None
        queue = deque([root])
        while queue:
            f = queue.popleft()
            for g, diff in links[f]:
                expected = shift[f] + diff
                if g not in shift:
                    shift[g], parent[g] = expected, f
                    queue.append(g)
                elif abs(shift[g] - expected) > 1e3 * tol:
                    cycle = [g]
                    while parent[cycle[-1]] is not None:
                        cycle.append(parent[cycle[-1]])
                    trail = [f]
                    while parent[trail[-1]] is not None:
                        trail.append(parent[trail[-1]])
                    raise DecompositionError(
                        f"offsets inconsistent by {abs(shift[g] - expected):.3e} on the cycle through "
                        f"fragments {list(reversed(trail))} and {cycle}"
                    )
    cells = [cell.model_copy(update={"offset": cell.offset + shift[owner[i]]}) for i, cell in enumerate(cells)]
    cyl_cells = cylinder_cells(surface, cells) if surface is not None and surface.cylinders else []
    segments, nodes = switching_set(cells, atlas)
    structure = LevelFunction(
        k=surface.k if surface is not None else (k or 2),
        digest=surface_digest(surface) if surface is not None else "",
        cells=cells, cylinder_cells=cyl_cells, segments=segments, nodes=nodes,
        tiles=list(cylinders or []) + list(tiles or []),
    )
    logger.info(
        f"Assembled level function: {len(cells)} cells, {sum(s.kind == 'switching' for s in segments)} "
        f"switching and {sum(s.kind == 'special' for s in segments)} special segments, {len(nodes)} nodes"
    )
    return structure


def fill_decomposition(surface: FlatSurface, decomposition: Decomposition,
                       workers: Optional[int] = None) -> List[List[LevelCell]]:
    """Per-tile chart cells of a decomposition of the cut surface."""
    atlas = get_atlas(surface)
    k = surface.k
    fragments: List[List[LevelCell]] = []
    polygon_tiles = [t for t in decomposition.tiles if t.kind != "Cylinder"]
    frame_cells = dict(zip((t.index for t in polygon_tiles), fill_tiles(polygon_tiles, k, workers)))
    for tile in decomposition.tiles:
        component = decomposition.components[tile.component]
        if tile.kind == "Cylinder":
            fragments.append(cylinder_component_cells(atlas, component, tile.index))
        else:
            fragments.append(place_cells(atlas, component, frame_cells[tile.index]))
    return fragments


def tile_structure(tile: Tile, k: int) -> LevelFunction:
    """Level function of a single tile, its frame used as chart 0."""
    cells = [cell.model_copy(update={"chart": 0}) for cell in fill_tile(tile, k)]
    segments, nodes = switching_set(cells)
    return LevelFunction(k=k, cells=cells, segments=segments, nodes=nodes, tiles=[tile])


# Level curves


class LevelIndex:
    """Cell lookup for one level function."""

    def __init__(self, structure: LevelFunction, surface: Optional[FlatSurface] = None):
        self.structure = structure
        self.atlas = get_atlas(surface) if surface is not None else None
        cells = structure.cells
        scale = max(1.0, self.atlas.diameter) if self.atlas is not None else max(
            [1.0] + [polygon_diameter([complex(z) for z in c.vertices]) for c in cells])
        self.scale = scale
        self.tol = 1e-9 * scale
        self.vertices = [[complex(z) for z in c.vertices] for c in cells]
        self.by_chart: Dict[int, List[int]] = {}
        for index, cell in enumerate(cells):
            self.by_chart.setdefault(cell.chart, []).append(index)
        self.shapes = {i: ShapelyPolygon([(z.real, z.imag) for z in self.vertices[i]]) for i in range(len(cells))}
        self.trees = {p: shapely.STRtree([self.shapes[i] for i in members]) for p, members in self.by_chart.items()}
        self.stops: Dict[int, List[complex]] = {}
        for node in structure.nodes:
            if node.tag != "regular":
                self.stops.setdefault(node.chart, []).append(complex(node.z))

    def near(self, p: int, z: complex, tol: Optional[float] = None) -> List[int]:
        tol = tol or 10 * self.tol
        if p not in self.trees:
            return []
        point = ShapelyPoint(z.real, z.imag)
        members = self.by_chart[p]
        hits = self.trees[p].query(point.buffer(tol))
        return [members[int(h)] for h in hits if self.shapes[members[int(h)]].distance(point) <= tol]

    def locate(self, p: int, z: complex) -> Optional[int]:
        """Cell containing z, preferring the one with z deepest inside."""
        candidates = self.near(p, z)
        if not candidates:
            return None
        point = ShapelyPoint(z.real, z.imag)
        return max(candidates, key=lambda i: self.shapes[i].exterior.distance(point)
                   if self.shapes[i].contains(point) else -self.shapes[i].distance(point))

    def value(self, p: int, z: complex) -> Optional[float]:
        index = self.locate(p, z)
        return None if index is None else self.structure.cells[index].value(z)

    def enter(self, p: int, z: complex, level: float, exclude: Optional[int] = None) -> Optional[Tuple[int, float]]:
        """Cell the level curve through z continues into, with the length it runs there."""
        best = None
        for index in self.near(p, z):
            if index == exclude:
                continue
            cell = self.structure.cells[index]
            if abs(cell.value(z) - level) > 1e-6 * self.scale:
                continue
            g = complex(cell.gradient)
            d = 1j * g / abs(g)
            run = convex_exit(z, d, self.vertices[index])
            if run > 10 * self.tol and (best is None or run > best[1]):
                best = (index, run)
        return best


def trace_level_curve(structure: LevelFunction, chart: int, z: complex,
                      surface: Optional[FlatSurface] = None, max_steps: Optional[int] = None,
                      index: Optional[LevelIndex] = None) -> LevelCurve:
    """
    Follow the level component of Phi through a chart point.

    The curve runs along i*gradient in every cell, crossing into the next
    cell of the same chart or, on a glued edge, of the partner chart.
    Switching points are cell changes with a different gradient.

    Returns:
        LevelCurve; special when it reaches a singularity or a node, open when
        it leaves through the boundary or the step budget runs out

    Raises:
        ValueError: z is not in any cell
    """
    index = index or LevelIndex(structure, surface)
    atlas = index.atlas
    cells = structure.cells
    steps = max_steps or settings.MAX_LEVEL_STEPS
    start = index.locate(chart, z)
    if start is None:
        raise ValueError(f"point {z} is not covered by a cell of chart {chart}")
    level = cells[start].value(z)
    entry = index.enter(chart, z, level) or (start, 0.0)
    current = entry[0]
    p, x = chart, z
    closure = settings.CLOSURE_TOL * index.scale
    curve = LevelCurve(level=level, points=[(p, z)], cells=[current])
    length = 0.0
    switching = 0
    for _ in range(steps):
        g = complex(cells[current].gradient)
        d = 1j * g / abs(g)
        run = convex_exit(x, d, index.vertices[current])
        y = x + run * d
        if p == chart and length > 1e3 * index.tol:
            dist, s = _foot(z, x, y)
            if dist <= closure:
                curve.points.append((p, z))
                curve.closed = True
                curve.residual = dist
                curve.length = length + s * run
                curve.switching_points = switching
                return curve
        length += run
        curve.points.append((p, y))
        if any(abs(y - q) <= 10 * index.tol for q in index.stops.get(p, [])) or _at_singular_vertex(atlas, p, y, index.tol):
            curve.special = True
            break
        step = index.enter(p, y, level, exclude=current)
        if step is not None:
            if abs(complex(cells[step[0]].gradient) - g) > GRADIENT_MATCH:
                switching += 1
            current = step[0]
            x = y
            curve.cells.append(current)
            continue
        crossing = _cross_gluing(index, p, y, level)
        if crossing is None:
            break
        q, y_q, nxt, rot = crossing
        if abs(complex(cells[nxt].gradient) - g * zeta(atlas.k, rot)) > GRADIENT_MATCH:
            switching += 1
        p, x, current = q, y_q, nxt
        curve.points.append((p, x))
        curve.cells.append(current)
    curve.length = length
    curve.switching_points = switching
    return curve


def _foot(z: complex, a: complex, b: complex) -> Tuple[float, float]:
    d = b - a
    length2 = abs(d) ** 2
    if length2 == 0:
        return abs(z - a), 0.0
    s = max(0.0, min(1.0, dot(z - a, d) / length2))
    return abs(z - (a + s * d)), s


def _at_singular_vertex(atlas: Optional[Atlas], p: int, y: complex, tol: float) -> bool:
    if atlas is None:
        return False
    for i, v in enumerate(atlas.polys[p]):
        if abs(v - y) <= 10 * tol:
            return atlas.is_stop_vertex(p, i)
    return False


def _cross_gluing(index: LevelIndex, p: int, y: complex, level: float):
    atlas = index.atlas
    if atlas is None:
        return None
    for i in range(len(atlas.polys[p])):
        info = atlas.edges[(p, i)]
        if info.kind != "glued":
            continue
        if _foot(y, info.start, info.end)[0] > 10 * index.tol:
            continue
        q = info.partner[0]
        y_q = info.transition(y)
        step = index.enter(q, y_q, level)
        if step is not None:
            return q, y_q, step[0], info.transition.rot
    return None
