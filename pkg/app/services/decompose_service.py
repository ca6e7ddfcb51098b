"""
Service for cutting a flat surface along its critical trajectories and
slicing the resulting components into triangles, trapezoids and cylinders.
"""
import cmath
import logging
import math
from collections import deque
from fractions import Fraction
from functools import reduce
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import shapely
from shapely.geometry import LineString
from shapely.geometry import Point as ShapelyPoint
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.geometry.polygon import orient
from shapely.ops import polygonize

from app.core.config import settings
from app.core.exceptions import DecompositionError, RefusalError
from app.models.structure import Component, Decomposition, Face, Tile
from app.models.surface import BoundaryEdge, FlatSurface, Mark
from app.models.trajectory import ChartSegment, Trajectory
from app.services import trajectory_service
from app.services.flat_model_service import Atlas, Transition, get_atlas, ingest_gluing
from app.utils.geometry import (
    angle_distance,
    clip_halfplane,
    cross,
    interior_angle,
    point_segment_distance,
    polygon_diameter,
    remove_collinear,
    segment_intersection,
    signed_area,
)

logger = logging.getLogger(__name__)

RECURRENT = ("DenseDetected", "LengthBudgetExhausted")


def _tol(atlas: Atlas) -> float:
    return max(1e-9 * max(1.0, atlas.diameter), 100 * settings.GEOMETRY_GRID)


def cut_cylinders(surface: FlatSurface) -> Tuple[FlatSurface, List[Tile]]:
    """
    Remove the infinite cylinders of the order -k poles.

    The loops they were attached along become labelled boundary edges. Every
    corner of a singular vertex class keeps its mark, since classes joined
    only through cylinder junctions fall apart after the cut.

    Returns:
        (reduced surface, one Cylinder tile of infinite height per pole)
    """
    if not surface.cylinders:
        return surface, []
    atlas = get_atlas(surface)
    boundary = list(surface.boundary)
    tiles: List[Tile] = []
    for c, cylinder in enumerate(surface.cylinders):
        label = cylinder.label or f"Y{c}"
        boundary.extend(BoundaryEdge(edge=tuple(ref), label=label) for ref in cylinder.edges)
        tiles.append(Tile(
            index=c, kind="Cylinder", circumference=cylinder.circumference, height=math.inf, label=label,
        ))
    marks = [
        Mark(vertex=corner, label=vc.label, order=vc.order)
        for vc in atlas.classes if vc.singular
        for corner in vc.corners
    ]
    reduced = surface.model_copy(update={"cylinders": [], "boundary": boundary, "marks": marks})
    logger.info(f"Cut off {len(tiles)} infinite cylinders")
    return ingest_gluing(reduced), tiles


# Cut segments


def _on_edge(atlas: Atlas, p: int, a: complex, b: complex, tol: float) -> Optional[int]:
    for i in range(len(atlas.polys[p])):
        info = atlas.edges[(p, i)]
        if point_segment_distance(a, info.start, info.end)[0] <= tol and \
                point_segment_distance(b, info.start, info.end)[0] <= tol:
            return i
    return None


def _with_partner_copies(atlas: Atlas, segments: List[ChartSegment], tol: float) -> List[ChartSegment]:
    """Segments lying on glued edges also appear in the partner chart."""
    result = list(segments)
    for seg in segments:
        a, b = complex(seg.start), complex(seg.end)
        i = _on_edge(atlas, seg.polygon, a, b, tol)
        if i is None:
            continue
        info = atlas.edges[(seg.polygon, i)]
        if info.kind != "glued":
            continue
        result.append(ChartSegment(
            polygon=info.partner[0], start=info.transition(a), end=info.transition(b), cumulative=seg.cumulative,
        ))
    return result


def _truncate(trajectory: Trajectory, cut: List[ChartSegment], tol: float) -> Optional[List[ChartSegment]]:
    """Fragment of a recurrent ray up to its first hit of the cut or of itself."""
    own: List[ChartSegment] = []
    for n, seg in enumerate(trajectory.segments):
        a, b = complex(seg.start), complex(seg.end)
        length = abs(b - a)
        candidates = [c for c in cut if c.polygon == seg.polygon]
        candidates += [o for o in own[:-1] if o.polygon == seg.polygon]
        best = None
        for other in candidates:
            hit = segment_intersection(a, b, complex(other.start), complex(other.end))
            if hit is None:
                continue
            t = hit[0]
            if n == 0 and t * length <= tol:
                continue
            if best is None or t < best:
                best = t
        if best is not None:
            end = a + best * (b - a)
            own.append(ChartSegment(polygon=seg.polygon, start=a, end=end,
                                    cumulative=seg.cumulative - (1.0 - best) * length))
            return own
        own.append(seg)
    return None


def cut_segments(surface: FlatSurface, budget: Optional[float] = None,
                 workers: Optional[int] = None) -> List[ChartSegment]:
    """
    Chart segments of the cut.

    Critical trajectories that end at a singularity or on the boundary are
    taken in full. A recurrent one contributes its fragment up to the first
    hit of the cut built so far or of itself. For odd k the rays ending at a
    singularity are traced as well.

    Raises:
        DecompositionError: a recurrent ray never meets the cut within the budget
    """
    atlas = get_atlas(surface)
    k = surface.k
    tol = _tol(atlas)
    rays = trajectory_service.critical_graph(surface, budget, incoming=(k % 2 == 1), workers=workers)
    cut = [seg for ray in rays if ray.termination.kind not in RECURRENT for seg in ray.segments]
    cut = _with_partner_copies(atlas, [s for s in cut if abs(complex(s.end) - complex(s.start)) > tol], tol)
    for ray in rays:
        if ray.termination.kind not in RECURRENT:
            continue
        fragment = _truncate(ray, cut, tol)
        if fragment is None:
            partial = Decomposition(
                k=k, cut=cut, complete=False,
                message=f"recurrent critical trajectory from {ray.source} never met the cut",
            )
            raise DecompositionError(partial.message, partial=partial)
        logger.debug(f"Truncated recurrent ray from {ray.source} after {len(fragment)} segments")
        cut = cut + _with_partner_copies(atlas, fragment, tol)
    return [s for s in cut if abs(complex(s.end) - complex(s.start)) > tol]


# Faces and components


def _chart_faces(atlas: Atlas, p: int, cut: Sequence[ChartSegment]) -> List[List[complex]]:
    poly = atlas.polys[p]
    lines = [LineString([(z.real, z.imag) for z in poly + [poly[0]]])]
    lines += [
        LineString([(complex(s.start).real, complex(s.start).imag), (complex(s.end).real, complex(s.end).imag)])
        for s in cut if s.polygon == p
    ]
    grid = settings.GEOMETRY_GRID * max(1.0, atlas.diameter)
    noded = shapely.union_all(lines, grid_size=grid)
    faces: List[List[complex]] = []
    area = 0.0
    for piece in polygonize(list(shapely.get_parts(noded))):
        if piece.area <= grid * grid:
            continue
        if len(piece.interiors):
            raise DecompositionError(f"cut leaves a face with a hole in chart {p}")
        piece = orient(piece, 1.0)
        faces.append([complex(x, y) for x, y in piece.exterior.coords[:-1]])
        area += piece.area
    if abs(area - signed_area(poly)) > 1e-6 * max(1.0, signed_area(poly)):
        raise DecompositionError(f"faces of chart {p} cover area {area:.9g} of {signed_area(poly):.9g}")
    return faces


def _covered(z: complex, segments: Sequence[ChartSegment], tol: float) -> bool:
    return any(point_segment_distance(z, complex(s.start), complex(s.end))[0] <= tol for s in segments)


def _face_at(faces: List[Tuple[int, List[complex]]], z: complex, tol: float) -> Optional[int]:
    point = ShapelyPoint(z.real, z.imag)
    for f, verts in faces:
        if ShapelyPolygon([(v.real, v.imag) for v in verts]).exterior.distance(point) <= tol:
            return f
    return None


def _horizontal_line(k: int, d: complex, tol: float) -> bool:
    period = math.pi / k if k % 2 else 2 * math.pi / k
    return angle_distance(math.atan2(d.imag, d.real), period) <= tol


def _develop(faces: List[Tuple[int, List[complex]]], members: List[int], adjacency: Dict, k: int,
             tol: float) -> Tuple[Dict[int, Transition], Optional[complex]]:
    """Place the faces of one component in a common frame; returns placements and the deck shift."""
    root = min(members)
    placed: Dict[int, Transition] = {root: Transition(k, 0, 0j)}
    deck: Optional[complex] = None
    queue = deque([root])
    while queue:
        f = queue.popleft()
        for g, transition in adjacency[f]:
            candidate = placed[f].compose(transition.inverse())
            if g not in placed:
                placed[g] = candidate
                queue.append(g)
                continue
            old = placed[g]
            if candidate.rot == old.rot and abs(candidate.shift - old.shift) <= tol:
                continue
            if candidate.rot != old.rot:
                raise DecompositionError(f"component of face {root} has rotational holonomy")
            shift = candidate.shift - old.shift
            if not _horizontal_line(k, shift, 1e-6):
                raise DecompositionError(f"component of face {root} closes up along a non-horizontal shift")
            if deck is None or abs(shift) < abs(deck) - tol:
                if deck is not None and abs(cross(deck, shift)) > tol * abs(deck):
                    raise DecompositionError(f"component of face {root} closes up in two directions")
                deck = shift
    return placed, deck


def components(surface: FlatSurface, cut: Sequence[ChartSegment]) -> List[Component]:
    """
    Connected components of the surface minus the cut, developed into frames.

    Faces of neighbouring charts are joined across glued edges wherever the
    shared stretch is not part of the cut.
    """
    atlas = get_atlas(surface)
    tol = _tol(atlas)
    by_chart: Dict[int, List[ChartSegment]] = {}
    for seg in cut:
        by_chart.setdefault(seg.polygon, []).append(seg)
    faces: List[Tuple[int, List[complex]]] = []
    chart_faces: Dict[int, List[Tuple[int, List[complex]]]] = {}
    for p in range(len(atlas.polys)):
        for verts in _chart_faces(atlas, p, by_chart.get(p, [])):
            chart_faces.setdefault(p, []).append((len(faces), verts))
            faces.append((p, verts))

    adjacency: Dict[int, List[Tuple[int, Transition]]] = {f: [] for f in range(len(faces))}
    graph = nx.Graph()
    graph.add_nodes_from(range(len(faces)))
    for f, (p, verts) in enumerate(faces):
        for a, b in zip(verts, verts[1:] + verts[:1]):
            i = _on_edge(atlas, p, a, b, tol)
            if i is None or atlas.edges[(p, i)].kind != "glued":
                continue
            info = atlas.edges[(p, i)]
            m = 0.5 * (a + b)
            if _covered(m, by_chart.get(p, []), tol):
                continue
            g = _face_at(chart_faces.get(info.partner[0], []), info.transition(m), tol)
            if g is None:
                raise DecompositionError(f"no face across edge {[p, i]} at {m}")
            adjacency[f].append((g, info.transition))
            graph.add_edge(f, g)

    result: List[Component] = []
    for members in sorted((sorted(c) for c in nx.connected_components(graph)), key=lambda c: c[0]):
        placed, deck = _develop(faces, members, adjacency, atlas.k, tol)
        face_models = [
            Face(polygon=faces[f][0], vertices=faces[f][1], rot=placed[f].rot, shift=placed[f].shift)
            for f in members
        ]
        index = len(result)
        if deck is not None:
            result.append(Component(index=index, kind="cylinder", faces=face_models, deck=deck))
            continue
        grid = settings.GEOMETRY_GRID * max(1.0, atlas.diameter)
        developed = [
            ShapelyPolygon([(z.real, z.imag) for z in (placed[f](v) for v in faces[f][1])]) for f in members
        ]
        union = shapely.union_all(developed, grid_size=grid)
        if union.geom_type != "Polygon" or len(union.interiors):
            raise DecompositionError(f"component {index} does not develop to a simple polygon")
        union = orient(union, 1.0)
        outline = [complex(x, y) for x, y in union.exterior.coords[:-1]]
        result.append(Component(index=index, kind="polygon", faces=face_models, outline=outline))
    return result


# Tiling


def _singular_points(atlas: Atlas, component: Component, tol: float) -> List[complex]:
    points: List[complex] = []
    for face in component.faces:
        frame = Transition(atlas.k, face.rot, complex(face.shift))
        for i, v in enumerate(atlas.polys[face.polygon]):
            if not atlas.vertex_class(face.polygon, i).singular:
                continue
            if any(abs(complex(z) - v) <= tol for z in face.vertices):
                w = frame(v)
                if not any(abs(w - q) <= tol for q in points):
                    points.append(w)
    return points


def _insert_points(vertices: List[complex], points: Sequence[complex], tol: float) -> List[complex]:
    """Add points lying on the sides of a polygon as extra vertices."""
    result: List[complex] = []
    n = len(vertices)
    for i in range(n):
        a, b = vertices[i], vertices[(i + 1) % n]
        result.append(a)
        inner = []
        for q in points:
            dist, s = point_segment_distance(q, a, b)
            if dist <= tol and abs(q - a) > tol and abs(q - b) > tol:
                inner.append((s, q))
        result.extend(q for _, q in sorted(inner, key=lambda item: item[0]))
    return result


def split_trapezoid(piece: List[complex], tol: float) -> List[List[complex]]:
    """
    Split a trapezoid with horizontal top and bottom into a symmetric
    trapezoid adjacent to its left leg and a triangle.
    """
    corners = remove_collinear(piece, [], tol)
    if len(corners) != 4:
        return [piece]
    flipped = False
    ys = sorted({round(z.imag / tol) for z in corners})
    bottom_y = min(z.imag for z in corners)
    bottom = sorted((z for z in corners if abs(z.imag - bottom_y) <= tol), key=lambda z: z.real)
    top = sorted((z for z in corners if abs(z.imag - bottom_y) > tol), key=lambda z: z.real)
    if len(ys) != 2 or len(bottom) != 2 or len(top) != 2:
        return [piece]
    if top[1].real - top[0].real > bottom[1].real - bottom[0].real:
        flipped = True
        corners = [z.conjugate() for z in corners]
        bottom, top = sorted((z.conjugate() for z in top), key=lambda z: z.real), \
            sorted((z.conjugate() for z in bottom), key=lambda z: z.real)
    x0, x1 = bottom[0], bottom[1]
    u0, u1 = top[0], top[1]
    a = u0.real - x0.real
    b = x1.real - u1.real
    if a < -tol or b < -tol:
        return [piece]
    if a <= b:
        cut = complex(u1.real + a, x0.imag)
        parts = [[x0, cut, u1, u0], [cut, x1, u1]]
    else:
        cut = complex(x1.real - a, u0.imag)
        parts = [[x0, x1, cut, u0], [x1, u1, cut]]
    parts = [remove_collinear(part, [], tol) for part in parts if abs(signed_area(part)) > tol * tol]
    if flipped:
        parts = [[z.conjugate() for z in reversed(part)] for part in parts]
    return [part for part in parts if len(part) >= 3]


def _slab_tiles(outline: List[complex], keep: Sequence[complex], tol: float) -> List[List[complex]]:
    """Slices between lines parallel to the longest side through every vertex."""
    n = len(outline)
    longest = max(range(n), key=lambda i: abs(outline[(i + 1) % n] - outline[i]))
    unit = outline[(longest + 1) % n] - outline[longest]
    unit /= abs(unit)
    local = [z / unit for z in outline]
    local_keep = [z / unit for z in keep]
    levels: List[float] = []
    for y in sorted(z.imag for z in local):
        if not levels or y - levels[-1] > tol:
            levels.append(y)
    pieces: List[List[complex]] = []
    for y0, y1 in zip(levels[:-1], levels[1:]):
        piece = clip_halfplane(local, -1j, -y0)
        piece = clip_halfplane(piece, 1j, y1)
        piece = remove_collinear(piece, [], tol)
        if len(piece) < 3 or signed_area(piece) <= tol * tol:
            continue
        for part in split_trapezoid(piece, tol):
            pieces.append([z * unit for z in _insert_points(part, local_keep, tol)])
    return pieces


def _lattice_tiles(outline: List[complex], tol: float) -> List[List[complex]]:
    """Equilateral lattice triangles covering a polygon with sides in directions (pi/3)Z."""
    lengths = [abs(b - a) for a, b in zip(outline, outline[1:] + outline[:1])]
    base = max(lengths)
    fractions = [Fraction(length / base).limit_denominator(1000) for length in lengths]
    for length, q in zip(lengths, fractions):
        if abs(float(q) * base - length) > 1e-9 * base:
            raise RefusalError(f"side length ratio {length / base:.12g} is not rational")
    denominator = reduce(lambda acc, q: acc * q.denominator // math.gcd(acc, q.denominator), fractions, 1)
    step = base * reduce(math.gcd, (int(q * denominator) for q in fractions)) / denominator
    origin = outline[0]
    e1 = (outline[1] - outline[0]) / abs(outline[1] - outline[0])
    omega = e1 * complex(0.5, math.sqrt(3) / 2)
    shape = ShapelyPolygon([(z.real, z.imag) for z in outline])

    def coords(z: complex) -> Tuple[float, float]:
        w = (z - origin) / step
        b = cross(e1, w) / cross(e1, omega)
        a = ((w - b * omega) / e1).real
        return a, b

    lattice = [coords(z) for z in outline]
    a_lo = math.floor(min(c[0] for c in lattice)) - 1
    a_hi = math.ceil(max(c[0] for c in lattice)) + 1
    b_lo = math.floor(min(c[1] for c in lattice)) - 1
    b_hi = math.ceil(max(c[1] for c in lattice)) + 1
    tiles: List[List[complex]] = []
    for a in range(a_lo, a_hi + 1):
        for b in range(b_lo, b_hi + 1):
            p = origin + step * (a * e1 + b * omega)
            for triangle in ([p, p + step * e1, p + step * omega],
                             [p + step * e1, p + step * (e1 + omega), p + step * omega]):
                center = sum(triangle) / 3
                if shape.contains(ShapelyPoint(center.real, center.imag)):
                    tiles.append(triangle)
    covered = sum(signed_area(t) for t in tiles)
    if abs(covered - shape.area) > 1e-6 * max(1.0, shape.area):
        raise DecompositionError(f"lattice triangles cover {covered:.9g} of a component of area {shape.area:.9g}")
    return tiles


def _odd_multiple(angle: float, k: int) -> bool:
    units = angle * k / math.pi
    return abs(units - round(units)) <= 1e-6 and round(units) % 2 == 1


def _is_horizontal_triangle(triangle: Sequence[complex], k: int) -> bool:
    """Angles in (2Z+1) pi/k, so the three sides run along one orientation of the field."""
    return all(
        _odd_multiple(interior_angle(triangle[i - 1], triangle[i], triangle[(i + 1) % 3]), k)
        for i in range(3)
    )


def _corner_rays(outline: List[complex], k: int, tol: float) -> List[complex]:
    """Boundary points hit by rays leaving each corner at multiples of pi/k."""
    shape = ShapelyPolygon([(z.real, z.imag) for z in outline])
    reach = 2.0 * polygon_diameter(outline)
    n = len(outline)
    hits: List[complex] = []
    for i in range(n):
        v = outline[i]
        u = outline[(i + 1) % n] - v
        u /= abs(u)
        units = round(interior_angle(outline[i - 1], v, outline[(i + 1) % n]) * k / math.pi)
        for t in range(1, units):
            end = v + reach * u * cmath.exp(1j * math.pi * t / k)
            crossing = shapely.get_coordinates(LineString([(v.real, v.imag), (end.real, end.imag)]).intersection(shape.exterior))
            points = [complex(x, y) for x, y in crossing]
            far = max(points, key=lambda z: abs(z - v), default=None)
            if far is not None and abs(far - v) > tol and all(abs(far - q) > tol for q in hits):
                hits.append(far)
    return hits


def _odd_angle_tiles(outline: List[complex], k: int, tol: float, index: int) -> List[List[complex]]:
    """
    Triangles with angles in (2Z+1) pi/k covering a convex polygon.

    Corner rays at multiples of pi/k add boundary vertices; an interval
    search over the resulting cycle then picks triangles (i, m, j) whose
    angles all pass the check.

    Raises:
        RefusalError: no such triangulation on the enlarged boundary
    """
    if len(outline) == 3 and _is_horizontal_triangle(outline, k):
        return [outline]
    cycle = _insert_points(outline, _corner_rays(outline, k, tol), tol)
    if len(cycle) > settings.MAX_TILING_VERTICES:
        raise RefusalError(f"component {index} needs {len(cycle)} boundary vertices to tile")
    span = max(1.0, polygon_diameter(cycle))
    memo: Dict[Tuple[int, int], Optional[List[List[complex]]]] = {}

    def solve(i: int, j: int) -> Optional[List[List[complex]]]:
        if j - i < 2 or abs(signed_area(cycle[i:j + 1])) <= tol * span:
            return []
        if (i, j) in memo:
            return memo[(i, j)]
        memo[(i, j)] = None
        for m in range(i + 1, j):
            triangle = [cycle[i], cycle[m], cycle[j]]
            if signed_area(triangle) <= tol * span or not _is_horizontal_triangle(triangle, k):
                continue
            left = solve(i, m)
            right = solve(m, j) if left is not None else None
            if right is not None:
                memo[(i, j)] = left + [triangle] + right
                break
        return memo[(i, j)]

    # root on the whole closing side; points inserted on it stay off the tiles
    last = max(i for i, z in enumerate(cycle) if z == outline[-1])
    tiles = solve(0, last)
    if tiles is None:
        raise RefusalError(
            f"component {index} has no triangulation with angles in odd multiples of pi/{k}"
        )
    return tiles


def _provenance(tile: List[complex], outline: List[complex], tol: float) -> List[str]:
    sides = []
    for a, b in zip(tile, tile[1:] + tile[:1]):
        on_outline = any(
            point_segment_distance(a, c, d)[0] <= tol and point_segment_distance(b, c, d)[0] <= tol
            for c, d in zip(outline, outline[1:] + outline[:1])
        )
        sides.append("cut" if on_outline else "slice")
    return sides


def tile_component(component: Component, k: int, keep: Sequence[complex], tol: float,
                   first_index: int = 0) -> List[Tile]:
    """
    Tiles of a developed polygon component.

    Raises:
        DecompositionError: a corner exceeds pi
        RefusalError: odd k without a triangulation along the horizontal field
    """
    outline = remove_collinear([complex(z) for z in component.outline], keep, tol)
    for i in range(len(outline)):
        angle = interior_angle(outline[i - 1], outline[i], outline[(i + 1) % len(outline)])
        if angle > math.pi + 1e-6:
            raise DecompositionError(
                f"component {component.index} has a corner of angle {angle:.9g} > pi at {outline[i]}"
            )
    corners = remove_collinear(outline, [], tol)
    if k % 2 == 0:
        polygons = _slab_tiles(outline, keep, tol)
    elif k == 3:
        polygons = [_insert_points(t, keep, tol) for t in _lattice_tiles(corners, tol)]
    else:
        polygons = [_insert_points(t, keep, tol) for t in _odd_angle_tiles(corners, k, tol, component.index)]
    tiles = []
    for polygon in polygons:
        count = len(remove_collinear(polygon, [], tol))
        tiles.append(Tile(
            index=first_index + len(tiles), kind="Triangle" if count == 3 else "Trapezoid",
            component=component.index, vertices=polygon, provenance=_provenance(polygon, outline, tol),
        ))
    return tiles


def decompose(surface: FlatSurface, tol: Optional[float] = None, budget: Optional[float] = None,
              workers: Optional[int] = None) -> Decomposition:
    """
    Decompose a surface of finite area with horizontal boundary.

    Args:
        surface: flat surface, usually the output of cut_cylinders
        tol: geometric tolerance, derived from the diameter by default
        budget: length budget for the critical rays
        workers: concurrency cap for ray tracing

    Returns:
        Decomposition with convex or cylinder components and their tiles

    Raises:
        DecompositionError: the cut does not close, a component is not
            convex, or it does not develop consistently (carries the partial result)
    """
    if surface.cylinders:
        raise ValueError("decompose expects a surface without infinite cylinders; use cut_cylinders first")
    atlas = get_atlas(surface)
    tol = tol or _tol(atlas)
    cut = cut_segments(surface, budget, workers)
    try:
        parts = components(surface, cut)
        tiles: List[Tile] = []
        for component in parts:
            if component.kind == "cylinder":
                deck = complex(component.deck)
                unit = deck / abs(deck)
                heights = [
                    cross(unit, Transition(atlas.k, face.rot, complex(face.shift))(complex(z)))
                    for face in component.faces for z in face.vertices
                ]
                tiles.append(Tile(
                    index=len(tiles), kind="Cylinder", component=component.index,
                    circumference=abs(deck), height=max(heights) - min(heights),
                ))
                continue
            keep = _singular_points(atlas, component, tol)
            tiles.extend(tile_component(component, atlas.k, keep, tol, first_index=len(tiles)))
    except DecompositionError as e:
        if e.partial is None:
            e.partial = Decomposition(k=atlas.k, cut=cut, complete=False, message=str(e))
        raise
    logger.info(f"Decomposed surface into {len(parts)} components and {len(tiles)} tiles")
    return Decomposition(k=atlas.k, cut=cut, components=parts, tiles=tiles)
