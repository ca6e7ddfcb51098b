"""
Service for flat surfaces: ingestion of gluing documents, vertex classes and
cone angles, chart transitions, metric measurements, periods and the
arithmetic period check.
"""
import cmath
import json
import logging
import math
from collections import deque
from fractions import Fraction
from functools import reduce
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import mpmath
import networkx as nx
import numpy as np
from pydantic import ValidationError
from shapely.geometry import Point as ShapelyPoint
from shapely.geometry import Polygon as ShapelyPolygon

from app.core.config import settings
from app.core.exceptions import GluingError, SchemaError
from app.models.surface import (
    EdgeRef,
    FlatSurface,
    MetricReport,
    Period,
    PeriodFieldVerdict,
    VertexClass,
    VertexRef,
)
from app.utils.geometry import interior_angle, polygon_diameter, signed_area, zeta

logger = logging.getLogger(__name__)

# In-memory atlas cache keyed by surface identity
_atlas_cache: Dict[int, Tuple[FlatSurface, "Atlas"]] = {}
_ATLAS_CACHE_LIMIT = 64


class Transition:
    """Chart change x -> zeta^rot x + shift."""

    __slots__ = ("k", "rot", "shift")

    def __init__(self, k: int, rot: int, shift: complex):
        self.k = k
        self.rot = rot % k
        self.shift = shift

    def __call__(self, x: complex) -> complex:
        return zeta(self.k, self.rot) * x + self.shift

    def direction(self, d: complex) -> complex:
        return zeta(self.k, self.rot) * d

    def inverse(self) -> "Transition":
        unit = zeta(self.k, -self.rot)
        return Transition(self.k, -self.rot, -unit * self.shift)

    def compose(self, inner: "Transition") -> "Transition":
        """self after inner."""
        return Transition(self.k, self.rot + inner.rot, zeta(self.k, self.rot) * inner.shift + self.shift)


class EdgeInfo:
    """Geometry and identification of one polygon edge."""

    __slots__ = ("ref", "start", "end", "kind", "partner", "transition", "gluing", "side", "cylinder", "label")

    def __init__(self, ref: EdgeRef, start: complex, end: complex):
        self.ref = ref
        self.start = start
        self.end = end
        self.kind: Optional[str] = None  # glued | cylinder | boundary
        self.partner: Optional[EdgeRef] = None
        self.transition: Optional[Transition] = None
        self.gluing: Optional[int] = None
        self.side: Optional[str] = None  # 'a' or 'b' within its gluing
        self.cylinder: Optional[int] = None
        self.label: Optional[str] = None

    @property
    def vector(self) -> complex:
        return self.end - self.start

    @property
    def length(self) -> float:
        return abs(self.end - self.start)


class Atlas:
    """Derived, read-only data of a validated surface."""

    def __init__(self, surface: FlatSurface):
        self.surface = surface
        self.k = surface.k
        self.polys: List[List[complex]] = [[complex(v) for v in poly.vertices] for poly in surface.polygons]
        self.edges: Dict[EdgeRef, EdgeInfo] = {}
        self.classes: List[VertexClass] = []
        self.corner_class: Dict[VertexRef, int] = {}
        self._shapes: Dict[int, ShapelyPolygon] = {}
        self._check_polygons()
        self._index_edges()
        self._build_classes()
        self.diameter = max(polygon_diameter(poly) for poly in self.polys)

    # Polygons and edges

    def _check_polygons(self) -> None:
        for p, poly in enumerate(self.polys):
            if len(poly) < 3:
                raise GluingError(f"polygon {p} has fewer than 3 vertices")
            if signed_area(poly) <= 0:
                raise GluingError(f"polygon {p} is not counterclockwise")
            if not self.shape(p).is_valid:
                raise GluingError(f"polygon {p} is not simple")

    def shape(self, p: int) -> ShapelyPolygon:
        if p not in self._shapes:
            self._shapes[p] = ShapelyPolygon([(z.real, z.imag) for z in self.polys[p]])
        return self._shapes[p]

    def vertex(self, p: int, i: int) -> complex:
        poly = self.polys[p]
        return poly[i % len(poly)]

    def edge(self, ref: EdgeRef) -> EdgeInfo:
        try:
            return self.edges[(ref[0], ref[1])]
        except KeyError:
            raise SchemaError(f"edge {list(ref)} does not exist") from None

    def _claim(self, ref: EdgeRef, what: str) -> EdgeInfo:
        info = self.edge(ref)
        if info.kind is not None:
            raise GluingError(f"edge {list(ref)} used twice ({info.kind} and {what})")
        info.kind = what
        return info

    def _index_edges(self) -> None:
        k = self.k
        for p, poly in enumerate(self.polys):
            for i in range(len(poly)):
                self.edges[(p, i)] = EdgeInfo((p, i), poly[i], poly[(i + 1) % len(poly)])
        for g, gluing in enumerate(self.surface.gluings):
            a_ref, b_ref = tuple(gluing.edge_a), tuple(gluing.edge_b)
            if not 0 <= gluing.rot < k:
                raise GluingError(f"gluing {g}: rotation index {gluing.rot} out of range 0..{k - 1}")
            if a_ref == b_ref:
                raise GluingError(f"gluing {g}: edge {list(a_ref)} glued to itself")
            a = self._claim(a_ref, "glued")
            b = self._claim(b_ref, "glued")
            expected = zeta(k, gluing.rot) * (a.end - a.start)
            actual = b.start - b.end
            scale = max(a.length, b.length)
            if abs(a.length - b.length) > settings.GLUING_LENGTH_TOL * scale:
                raise GluingError(
                    f"gluing {g}: length mismatch {a.length:.12g} vs {b.length:.12g} "
                    f"on edges {list(a_ref)} and {list(b_ref)}"
                )
            if abs(expected - actual) > settings.GLUING_LENGTH_TOL * scale * 10:
                raise GluingError(f"gluing {g}: edge directions do not match rotation {gluing.rot}")
            a.partner, b.partner = b_ref, a_ref
            a.gluing = b.gluing = g
            a.side, b.side = "a", "b"
            unit = zeta(k, gluing.rot)
            a.transition = Transition(k, gluing.rot, b.end - unit * a.start)
            b.transition = Transition(k, -gluing.rot, a.start - b.end / unit)
        for c, cylinder in enumerate(self.surface.cylinders):
            total = 0.0
            for ref in cylinder.edges:
                info = self._claim(tuple(ref), "cylinder")
                info.cylinder = c
                info.label = cylinder.label
                total += info.length
            if abs(total - cylinder.circumference) > settings.GLUING_LENGTH_TOL * max(1.0, total) * 10:
                raise GluingError(
                    f"cylinder {c}: circumference {cylinder.circumference:.12g} "
                    f"differs from attached edge length {total:.12g}"
                )
        for entry in self.surface.boundary:
            info = self._claim(tuple(entry.edge), "boundary")
            info.label = entry.label
        unused = [list(ref) for ref, info in self.edges.items() if info.kind is None]
        if unused:
            raise GluingError(f"edges not glued, attached or on the boundary: {unused}")

    # Vertex classes

    def _build_classes(self) -> None:
        k = self.k
        graph = nx.Graph()
        for p, poly in enumerate(self.polys):
            for i in range(len(poly)):
                graph.add_node((p, i))
        for gluing in self.surface.gluings:
            (p, i), (q, j) = gluing.edge_a, gluing.edge_b
            graph.add_edge((p, i), (q, (j + 1) % len(self.polys[q])))
            graph.add_edge((p, (i + 1) % len(self.polys[p])), (q, j))
        junction_corners: List[VertexRef] = []
        for cylinder in self.surface.cylinders:
            loop = [tuple(ref) for ref in cylinder.edges]
            for t, (p, i) in enumerate(loop):
                q, j = loop[(t + 1) % len(loop)]
                end_corner = (p, (i + 1) % len(self.polys[p]))
                graph.add_edge(end_corner, (q, j))
                junction_corners.append(end_corner)
        boundary_corners = set()
        for entry in self.surface.boundary:
            p, i = entry.edge
            boundary_corners.add((p, i))
            boundary_corners.add((p, (i + 1) % len(self.polys[p])))
        marks: Dict[VertexRef, Tuple[str, int]] = {}
        for mark in self.surface.marks:
            p, i = mark.vertex
            if p >= len(self.polys) or i >= len(self.polys[p]):
                raise SchemaError(f"mark '{mark.label}' refers to missing vertex {list(mark.vertex)}")
            marks[(p, i)] = (mark.label, mark.order)

        components = sorted((sorted(c) for c in nx.connected_components(graph)), key=lambda c: c[0])
        for index, corners in enumerate(components):
            angle = sum(
                interior_angle(self.vertex(p, i - 1), self.vertex(p, i), self.vertex(p, i + 1))
                for p, i in corners
            )
            junctions = sum(1 for c in junction_corners if c in corners)
            angle += junctions * math.pi
            on_boundary = any(c in boundary_corners for c in corners)
            marked = {marks[c] for c in corners if c in marks}
            if len(marked) > 1:
                raise GluingError(f"vertex class {index} carries conflicting marks {sorted(marked)}")
            if marked:
                label, order = marked.pop()
                expected = (order + k) * 2.0 * math.pi / k
                if not on_boundary and abs(angle - expected) > settings.CONE_ANGLE_TOL * max(1.0, expected):
                    raise GluingError(
                        f"cone angle at '{label}' is {angle:.9g}, mark says order {order} "
                        f"(angle {expected:.9g})"
                    )
            elif on_boundary:
                label, order = f"B{index}", 0
            else:
                m_float = k * angle / (2.0 * math.pi) - k
                order = int(round(m_float))
                if abs(m_float - order) > settings.CONE_ANGLE_TOL * k * 10:
                    raise GluingError(
                        f"vertex class {index} has angle {angle:.9g}, not a multiple of 2pi/{k}"
                    )
                label = f"v{index}" if order == 0 else f"V{index}"
            self.classes.append(VertexClass(
                index=index, label=label, order=order, angle=angle,
                corners=corners, junctions=junctions, on_boundary=on_boundary,
            ))
            for c in corners:
                self.corner_class[c] = index

    def vertex_class(self, p: int, i: int) -> VertexClass:
        return self.classes[self.corner_class[(p, i % len(self.polys[p]))]]

    def class_by_label(self, label: str) -> VertexClass:
        for vc in self.classes:
            if vc.label == label:
                return vc
        raise SchemaError(f"no vertex class labelled '{label}'")

    def is_stop_vertex(self, p: int, i: int) -> bool:
        """Vertices where trajectories terminate: singular or on the free boundary."""
        vc = self.vertex_class(p, i)
        return vc.singular or vc.on_boundary

    def next_corner(self, corner: VertexRef) -> Optional[VertexRef]:
        """Next corner counterclockwise around the vertex, across edge i-1."""
        p, i = corner
        incoming = self.edges[(p, (i - 1) % len(self.polys[p]))]
        if incoming.kind == "glued":
            return incoming.partner
        if incoming.kind == "cylinder":
            loop = [tuple(ref) for ref in self.surface.cylinders[incoming.cylinder].edges]
            t = loop.index((p, (i - 1) % len(self.polys[p])))
            return loop[(t + 1) % len(loop)]
        return None

    def corner_angle(self, p: int, i: int) -> float:
        return interior_angle(self.vertex(p, i - 1), self.vertex(p, i), self.vertex(p, i + 1))

    def locate(self, p: int, z: complex, tol: float = 1e-9) -> bool:
        """Whether chart point z lies in the closed polygon p."""
        return self.shape(p).distance(ShapelyPoint(z.real, z.imag)) <= tol * max(1.0, self.diameter)

    def canonical(self, p: int, z: complex, tol: Optional[float] = None) -> Tuple:
        """
        Chart-independent key of a surface point.

        Vertices map to their class, points on glued edges to the 'a' side of
        the gluing, interior points to rounded chart coordinates.
        """
        tol = tol or settings.SNAP_TOL * max(1.0, self.diameter)
        quantum = 1e-7 * max(1.0, self.diameter)
        for i, v in enumerate(self.polys[p]):
            if abs(z - v) <= tol:
                return ("v", self.corner_class[(p, i)])
        for i in range(len(self.polys[p])):
            info = self.edges[(p, i)]
            a, b = info.start, info.end
            length2 = abs(b - a) ** 2
            s = ((z - a) * (b - a).conjugate()).real / length2
            if -1e-12 <= s <= 1 + 1e-12 and abs(a + s * (b - a) - z) <= tol:
                if info.kind == "glued" and info.side == "b":
                    q, j = info.partner
                    partner = self.edges[(q, j)]
                    # a.start matches b.end, so the parameter is reversed
                    return ("e", q, j, round((1.0 - s) * partner.length / quantum))
                return ("e", p, i, round(s * info.length / quantum))
        return ("i", p, round(z.real / quantum), round(z.imag / quantum))

    # Euler characteristic and curvature

    @property
    def euler_characteristic(self) -> int:
        s = self.surface
        faces = len(s.polygons) + len(s.cylinders)
        edges = len(s.gluings) + sum(len(c.edges) for c in s.cylinders) + len(s.boundary)
        return len(self.classes) - edges + faces

    def gauss_bonnet_defect(self) -> float:
        """Sum of angle defects plus 2pi per cylinder minus 2pi chi (zero on closed surfaces)."""
        curvature = sum(2.0 * math.pi - vc.angle for vc in self.classes)
        curvature += 2.0 * math.pi * len(self.surface.cylinders)
        return curvature - 2.0 * math.pi * self.euler_characteristic


def get_atlas(surface: FlatSurface) -> Atlas:
    """
    Cached atlas of a surface.

    Args:
        surface: validated surface model

    Returns:
        Atlas built once per surface object
    """
    key = id(surface)
    entry = _atlas_cache.get(key)
    if entry is not None and entry[0] is surface:
        return entry[1]
    atlas = Atlas(surface)
    if len(_atlas_cache) >= _ATLAS_CACHE_LIMIT:
        _atlas_cache.pop(next(iter(_atlas_cache)))
    _atlas_cache[key] = (surface, atlas)
    return atlas


def clear_atlas_cache() -> None:
    _atlas_cache.clear()


def ingest_gluing(doc: Union[str, bytes, Dict, FlatSurface]) -> FlatSurface:
    """
    Validate a surface document and its gluing invariants.

    Raises:
        SchemaError: malformed document
        GluingError: length, rotation, cone-angle or mark contradictions
    """
    if isinstance(doc, FlatSurface):
        surface = doc
    else:
        try:
            if isinstance(doc, (str, bytes)):
                surface = FlatSurface.model_validate_json(doc)
            else:
                surface = FlatSurface.model_validate(doc)
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(part) for part in first["loc"]) or "document"
            raise SchemaError(f"surface document, field '{field}': {first['msg']}") from e
    atlas = get_atlas(surface)
    if not surface.boundary:
        defect = atlas.gauss_bonnet_defect()
        if abs(defect) > 1e-6:
            raise GluingError(f"Gauss-Bonnet check failed, defect {defect:.3e}")
    logger.debug(
        f"Ingested surface k={surface.k} with {len(surface.polygons)} polygons, "
        f"{len(atlas.classes)} vertex classes"
    )
    return surface


def emit_surface(surface: FlatSurface) -> Dict:
    """Document form of a surface."""
    return surface.model_dump(mode="json", by_alias=True)


def load_surface(path: Union[str, Path]) -> FlatSurface:
    with open(path, "r", encoding="utf-8") as f:
        return ingest_gluing(json.load(f))


def vertex_classes(surface: FlatSurface) -> List[VertexClass]:
    return get_atlas(surface).classes


def diameter(surface: FlatSurface) -> float:
    return get_atlas(surface).diameter


def measure(surface: FlatSurface, path: Optional[Sequence[Tuple[int, Sequence[complex]]]] = None) -> MetricReport:
    """
    Canonical length of a chart path and area of the whole surface.

    Args:
        surface: flat surface
        path: optional legs (polygon index, chart polyline); None measures the whole surface

    Returns:
        MetricReport; area is inf when the surface has infinite cylinders
    """
    atlas = get_atlas(surface)
    if path is not None:
        length = 0.0
        for p, points in path:
            if p < 0 or p >= len(atlas.polys):
                raise ValueError(f"path leg refers to missing polygon {p}")
            pts = [complex(z) for z in points]
            for z in pts:
                if not atlas.locate(p, z):
                    raise ValueError(f"path exits atlas at {z} in polygon {p}")
            length += sum(abs(b - a) for a, b in zip(pts[:-1], pts[1:]))
        return MetricReport(canonical_length=length, area=0.0)
    area = sum(signed_area(poly) for poly in atlas.polys)
    if surface.cylinders:
        area = math.inf
    return MetricReport(canonical_length=0.0, area=area)


def developing_map(surface: FlatSurface, polygons: Optional[Sequence[int]] = None) -> Dict[int, Transition]:
    """
    Breadth-first spanning-tree placement of polygons in one frame.

    Returns:
        polygon index -> transition from its chart to the common frame
    """
    atlas = get_atlas(surface)
    allowed = set(range(len(atlas.polys))) if polygons is None else set(polygons)
    placed: Dict[int, Transition] = {}
    for root in sorted(allowed):
        if root in placed:
            continue
        placed[root] = Transition(atlas.k, 0, 0j)
        queue = deque([root])
        while queue:
            p = queue.popleft()
            for i in range(len(atlas.polys[p])):
                info = atlas.edges[(p, i)]
                if info.kind != "glued" or info.partner[0] not in allowed or info.partner[0] in placed:
                    continue
                q = info.partner[0]
                # chart q -> chart p is the inverse of p -> q
                placed[q] = placed[p].compose(info.transition.inverse())
                queue.append(q)
    return placed


def periods(surface: FlatSurface, branch: int = 0) -> List[Period]:
    """
    Periods between conical singularities along spanning-tree paths.

    One value per corner of every conical class relative to the first
    conical class; branch b multiplies all values by zeta^b.

    Raises:
        ValueError: fewer than 2 conical singularities
    """
    atlas = get_atlas(surface)
    k = atlas.k
    conical = [vc for vc in atlas.classes if vc.singular and vc.order > -k and not vc.on_boundary]
    if len(conical) < 2:
        raise ValueError("periods need at least 2 conical singularities")
    placement = developing_map(surface)
    base = conical[0]
    bp, bi = base.corners[0]
    origin = placement[bp](atlas.vertex(bp, bi))
    unit = zeta(k, branch)
    result: List[Period] = []
    seen: List[complex] = []
    for vc in conical[1:]:
        for p, i in vc.corners:
            value = placement[p](atlas.vertex(p, i)) - origin
            if any(abs(value - s) <= 1e-12 * max(1.0, abs(value)) for s in seen):
                continue
            seen.append(value)
            result.append(Period(source=base.label, target=vc.label, value=unit * value, branch=branch % k))
    return result


def _euler_phi(k: int) -> int:
    return sum(1 for j in range(1, k + 1) if math.gcd(j, k) == 1)


def check_period_field(values: Sequence[Union[complex, Period]], k: int,
                       denominator_bound: Optional[int] = None,
                       tol: Optional[float] = None) -> PeriodFieldVerdict:
    """
    Detect whether all period ratios lie in Q[zeta_k].

    Ratios to the first period are tested by an integer relation search over
    the basis 1, zeta, ..., zeta^(phi(k)-1). Real and imaginary parts are
    combined with a transcendental weight and every relation found is
    verified on the complex values.

    Returns:
        PeriodFieldVerdict with the common factor (first period divided by the
        common denominator) and integer coordinates on success
    """
    bound = denominator_bound or settings.PERIOD_DENOMINATOR_BOUND
    tol = tol or settings.PERIOD_TOL
    numbers = [complex(v.value) if isinstance(v, Period) else complex(v) for v in values]
    if not numbers:
        raise ValueError("check_period_field needs at least one period")
    first = numbers[0]
    if first == 0:
        raise ValueError("first period is zero")
    phi = _euler_phi(k)
    basis = [zeta(k, j) for j in range(phi)]
    weight = math.pi / 3.0
    rational_coords: List[List[Fraction]] = []
    for index, value in enumerate(numbers):
        ratio = value / first
        with mpmath.workdps(30):
            vector = [mpmath.mpf(ratio.real + weight * ratio.imag)]
            vector += [mpmath.mpf(b.real + weight * b.imag) for b in basis]
            relation = mpmath.pslq(vector, tol=tol, maxcoeff=bound, maxsteps=20000)
        if relation is None or relation[0] == 0:
            logger.debug(f"No integer relation for period {index}")
            return PeriodFieldVerdict(verdict="not_detected", failing_index=index)
        c = relation[0]
        rebuilt = -sum(a * b for a, b in zip(relation[1:], basis)) / c
        if abs(ratio - rebuilt) > tol * 10 * max(1.0, abs(ratio)):
            return PeriodFieldVerdict(verdict="not_detected", failing_index=index)
        rational_coords.append([Fraction(-a, c) for a in relation[1:]])
    denominator = reduce(
        lambda acc, q: acc * q.denominator // math.gcd(acc, q.denominator),
        (q for coords in rational_coords for q in coords),
        1,
    )
    coordinates = [[(int(q * denominator), 1) for q in coords] for coords in rational_coords]
    return PeriodFieldVerdict(
        verdict="rational_after_common_factor",
        common_factor=first / denominator,
        coordinates=coordinates,
    )
