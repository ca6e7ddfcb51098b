"""
Service for quasi-Strebel structures: the full construction, validation of
level functions, pack extraction and the coarseness order.
"""
import bisect
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from shapely.geometry import Point as ShapelyPoint

from app.core.config import settings
from app.core.exceptions import DecompositionError, RefusalError
from app.models.differential import RationalKDifferential
from app.models.structure import (
    ClauseResult,
    CoarsenessVerdict,
    LevelCell,
    LevelFunction,
    Pack,
    PackPiece,
    StrebelReport,
    ValidationReport,
)
from app.models.surface import FlatSurface
from app.services import batch_service
from app.services import differential_service as ds
from app.services.decompose_service import cut_cylinders, decompose
from app.services.flat_builder_service import build_flat_model
from app.services.flat_model_service import check_period_field, get_atlas, periods
from app.services.level_service import (
    LevelIndex,
    assemble_level_function,
    fill_decomposition,
    shared_segments,
    surface_digest,
    trace_level_curve,
)
from app.utils.geometry import angle_distance, cross, is_convex, signed_area

logger = logging.getLogger(__name__)


def _needs_node(order: int, k: int) -> bool:
    """Singularities whose order is not a multiple of k/2 (of k for odd k) carry switching segments."""
    step = k // 2 if k % 2 == 0 else k
    return order % step != 0


def _random_point(rng: np.random.Generator, vertices: Sequence[complex]) -> complex:
    """Uniform point in a convex polygon by fan triangulation."""
    fan = [(vertices[0], vertices[i], vertices[i + 1]) for i in range(1, len(vertices) - 1)]
    weights = np.array([abs(signed_area(t)) for t in fan])
    a, b, c = fan[int(rng.choice(len(fan), p=weights / weights.sum()))]
    r1, r2 = rng.random(), rng.random()
    if r1 + r2 > 1:
        r1, r2 = 1 - r1, 1 - r2
    return a + r1 * (b - a) + r2 * (c - a)


def _sample_points(structure: LevelFunction, count: int, seed: int) -> List[Tuple[int, complex]]:
    rng = np.random.default_rng(seed)
    cells = structure.cells
    areas = np.array([signed_area([complex(z) for z in c.vertices]) for c in cells])
    picks = rng.choice(len(cells), size=count, p=areas / areas.sum())
    points = []
    for i in picks:
        verts = [complex(z) for z in cells[int(i)].vertices]
        center = sum(verts) / len(verts)
        # stay off the cell boundary
        points.append((cells[int(i)].chart, center + 0.9 * (_random_point(rng, verts) - center)))
    return points


def validate_structure(structure: LevelFunction, surface: Optional[FlatSurface] = None,
                       psi: Optional[RationalKDifferential] = None, samples: Optional[int] = None,
                       seed: Optional[int] = None, workers: Optional[int] = None) -> ValidationReport:
    """
    Check a level function clause by clause.

    Clauses:
        cells: finitely many convex cells covering every chart, Phi continuous
        branch: every gradient is a unit branch direction i*zeta^(-b)
        closed: sampled level components are closed broken trajectories
        switching_directions: switching segments run in directions pi/2 + (pi/k)Z
        nodes: valency-1 nodes are singularities of order not in (k/2)Z, and
            every such singularity is a node
        admissible: (with psi) the differential has admissible singularities

    Returns:
        ValidationReport; failures are reported, never raised
    """
    k = structure.k
    atlas = get_atlas(surface) if surface is not None else None
    scale = max(1.0, atlas.diameter) if atlas is not None else 1.0
    samples = samples or settings.LEVELS_PER_PACK
    seed = settings.KDIFF_SEED if seed is None else seed
    clauses: List[ClauseResult] = []
    cells = structure.cells

    # cells
    problems: List[str] = []
    if not cells:
        problems.append("no cells")
    for i, cell in enumerate(cells):
        if not is_convex([complex(z) for z in cell.vertices], 1e-9):
            problems.append(f"cell {i} is not convex")
    if atlas is not None:
        for p, poly in enumerate(atlas.polys):
            covered = sum(signed_area([complex(z) for z in c.vertices]) for c in cells if c.chart == p)
            if abs(covered - signed_area(poly)) > 1e-6 * max(1.0, signed_area(poly)):
                problems.append(f"chart {p} covered {covered:.9g} of {signed_area(poly):.9g}")
    jump = 0.0
    for item in shared_segments(cells, atlas):
        for z in (item.start, item.end):
            other = (item.gradient.conjugate() * z).real + item.offset
            jump = max(jump, abs(cells[item.a].value(z) - other))
    if jump > 1e-8 * scale:
        problems.append(f"Phi jumps by {jump:.3e} across a cell boundary")
    clauses.append(ClauseResult(name="cells", passed=not problems, detail="; ".join(problems[:5]), value=jump))

    # branch
    worst = 0.0
    for cell in cells:
        g = complex(cell.gradient)
        worst = max(worst, abs(abs(g) - 1.0), cell.branch(k)[1])
    if atlas is not None:
        for cyl in structure.cylinder_cells:
            for ref in surface.cylinders[cyl.cylinder].edges:
                info = atlas.edges[tuple(ref)]
                g = cyl.sign * -1j * info.vector / info.length
                worst = max(worst, LevelCell(chart=0, vertices=[0j, 1, 1j], gradient=g).branch(k)[1])
    clauses.append(ClauseResult(
        name="branch", passed=worst <= settings.GRADIENT_ANGLE_TOL,
        detail="" if worst <= settings.GRADIENT_ANGLE_TOL else f"gradient off a branch by {worst:.3e} rad",
        value=worst,
    ))

    # closed
    index = LevelIndex(structure, surface)
    points = _sample_points(structure, samples, seed) if cells else []
    curves = batch_service.run_batch(
        lambda item: trace_level_curve(structure, item[0], item[1], surface, index=index), points, workers,
    )
    open_curves = [n for n, c in enumerate(curves) if not c.closed and not c.special]
    residual = max((c.residual for c in curves if c.closed), default=0.0)
    lengths = [c.length for c in curves if c.closed] + [c.circumference for c in structure.cylinder_cells]
    length_sup = max(lengths) if lengths else None
    closed_ok = not open_curves and residual <= settings.CLOSURE_TOL * scale
    clauses.append(ClauseResult(
        name="closed", passed=closed_ok,
        detail="" if closed_ok else f"{len(open_curves)} of {len(curves)} sampled level curves do not close",
        value=residual,
    ))

    # switching directions
    bad = []
    for n, seg in enumerate(structure.segments):
        if seg.kind != "switching":
            continue
        d = complex(seg.end) - complex(seg.start)
        if angle_distance(math.atan2(d.imag, d.real) - math.pi / 2, math.pi / k) > settings.GRADIENT_ANGLE_TOL:
            bad.append(n)
    clauses.append(ClauseResult(
        name="switching_directions", passed=not bad,
        detail="" if not bad else f"segments {bad[:10]} are not trajectory directions",
        value=float(len(bad)),
    ))

    # nodes
    problems = []
    for node in structure.nodes:
        if node.valency == 1 and (node.tag != "singular" or not _needs_node(node.order, k)):
            problems.append(f"valency-1 node at {complex(node.z)} in chart {node.chart}")
    if atlas is not None:
        present = {node.label for node in structure.nodes if node.tag == "singular"}
        for vc in atlas.classes:
            if vc.singular and vc.order > -k and _needs_node(vc.order, k) and vc.label not in present:
                problems.append(f"singularity {vc.label} of order {vc.order} is not a node")
    clauses.append(ClauseResult(name="nodes", passed=not problems, detail="; ".join(problems[:5])))

    if psi is not None:
        report = ds.is_admissible(psi)
        clauses.append(ClauseResult(name="admissible", passed=report.admissible, detail="; ".join(report.reasons)))

    result = ValidationReport(clauses=clauses, length_sup=length_sup)
    failed = [c.name for c in clauses if not c.passed]
    if failed:
        logger.warning(f"Structure failed clauses {failed}")
    else:
        logger.info(f"Structure passed all {len(clauses)} clauses")
    return result


# Packs


class _PackTable:
    """Pieces (cell, level interval) of a level function joined into packs."""

    def __init__(self, structure: LevelFunction, surface: Optional[FlatSurface] = None):
        self.structure = structure
        self.surface = surface
        self.index = LevelIndex(structure, surface)
        self.atlas = self.index.atlas
        self.tol = 1e-9 * self.index.scale
        self.levels = self._critical_levels()
        self.bounds = [-math.inf] + self.levels + [math.inf]
        self.graph = nx.Graph()
        self.lengths: Dict[Tuple, float] = {}
        self.ranges: Dict[Tuple, Tuple[float, float]] = {}
        self._build()

    def _critical_levels(self) -> List[float]:
        values = [node.level for node in self.structure.nodes if node.tag != "regular"]
        values += [seg.level for seg in self.structure.segments if seg.kind == "special" and seg.level is not None]
        if self.atlas is not None:
            for cell in self.structure.cells:
                for z in cell.vertices:
                    for i, v in enumerate(self.atlas.polys[cell.chart]):
                        if abs(v - complex(z)) <= 10 * self.tol and self.atlas.vertex_class(cell.chart, i).singular:
                            values.append(cell.value(v))
        levels: List[float] = []
        for value in sorted(values):
            if not levels or value - levels[-1] > 1e3 * self.tol:
                levels.append(value)
        return levels

    def interval(self, level: float) -> Optional[int]:
        """Index of the open interval between critical levels, None on a critical level."""
        j = bisect.bisect_right(self.levels, level)
        if (j > 0 and abs(level - self.levels[j - 1]) <= 1e3 * self.tol) or \
                (j < len(self.levels) and abs(level - self.levels[j]) <= 1e3 * self.tol):
            return None
        return j

    def _build(self) -> None:
        cells = self.structure.cells
        for i, cell in enumerate(cells):
            values = [cell.value(complex(z)) for z in cell.vertices]
            lo, hi = min(values), max(values)
            for j in range(len(self.bounds) - 1):
                a, b = max(lo, self.bounds[j]), min(hi, self.bounds[j + 1])
                if b - a > 1e3 * self.tol:
                    self.graph.add_node(("c", i, j))
                    self.ranges[("c", i, j)] = (a, b)
        traced = set()
        for key in sorted(self.graph.nodes):
            if key in traced:
                continue
            _, i, j = key
            a, b = self.ranges[key]
            self._trace_piece(i, j, 0.5 * (a + b), traced)
        self._merge_across_levels()
        self._add_cylinders()

    def _locate_on_level(self, i: int, level: float) -> Optional[complex]:
        cell = self.structure.cells[i]
        verts = self.index.vertices[i]
        center = sum(verts) / len(verts)
        g = complex(cell.gradient)
        z = center + (level - cell.value(center)) * g / abs(g) ** 2
        if self.index.shapes[i].distance(ShapelyPoint(z.real, z.imag)) <= self.tol:
            return z
        # the centroid line misses; interpolate along the edge carrying the level
        for a, b in zip(verts, verts[1:] + verts[:1]):
            fa, fb = cell.value(a), cell.value(b)
            if (fa - level) * (fb - level) <= 0 and abs(fb - fa) > 0:
                point = a + (level - fa) / (fb - fa) * (b - a)
                return point + 1e-6 * (center - point)
        return None

    def _trace_piece(self, i: int, j: int, level: float, traced: set) -> None:
        z = self._locate_on_level(i, level)
        if z is None:
            return
        curve = trace_level_curve(self.structure, self.structure.cells[i].chart, z, self.surface, index=self.index)
        for c in curve.cells:
            key = ("c", c, j)
            if key in self.ranges:
                self.graph.add_edge(("c", i, j), key)
                traced.add(key)
        if curve.closed:
            self.lengths[("c", i, j)] = max(self.lengths.get(("c", i, j), 0.0), curve.length)

    def _merge_across_levels(self) -> None:
        for i, cell in enumerate(self.structure.cells):
            values = [cell.value(complex(z)) for z in cell.vertices]
            lo, hi = min(values), max(values)
            for j, level in enumerate(self.levels):
                if not lo + 1e3 * self.tol < level < hi - 1e3 * self.tol:
                    continue
                below, above = ("c", i, j), ("c", i, j + 1)
                if below not in self.ranges or above not in self.ranges:
                    continue
                z = self._locate_on_level(i, level)
                if z is None:
                    continue
                curve = trace_level_curve(self.structure, cell.chart, z, self.surface, index=self.index)
                if curve.closed and not curve.special:
                    self.graph.add_edge(below, above)

    def _add_cylinders(self) -> None:
        if self.atlas is None:
            return
        for cyl in self.structure.cylinder_cells:
            lo, hi = (cyl.offset, math.inf) if cyl.sign > 0 else (-math.inf, cyl.offset)
            keys = []
            for j in range(len(self.bounds) - 1):
                a, b = max(lo, self.bounds[j]), min(hi, self.bounds[j + 1])
                if b - a > 1e3 * self.tol:
                    key = ("y", cyl.cylinder, j)
                    self.graph.add_node(key)
                    self.ranges[key] = (a, b)
                    keys.append(key)
            for a, b in zip(keys, keys[1:]):
                self.graph.add_edge(a, b)
            if not keys:
                continue
            self.lengths[keys[0]] = cyl.circumference
            j0 = self.interval(cyl.offset)
            if j0 is None:
                continue
            info = self.atlas.edges[tuple(self.surface.cylinders[cyl.cylinder].edges[0])]
            inward = 1j * info.vector / info.length
            probe = info.start + 0.5 * info.vector + 1e-6 * info.length * inward
            i = self.index.locate(info.ref[0], probe)
            if i is not None and ("c", i, j0) in self.ranges:
                self.graph.add_edge(("y", cyl.cylinder, j0), ("c", i, j0))

    def packs(self) -> List[Pack]:
        result: List[Pack] = []
        labels = {cyl.cylinder: cyl.label for cyl in self.structure.cylinder_cells}
        for members in sorted((sorted(c) for c in nx.connected_components(self.graph)), key=lambda c: c[0]):
            pieces = [
                PackPiece(cell=f"{kind}{i}", lower=self.ranges[(kind, i, j)][0], upper=self.ranges[(kind, i, j)][1])
                for kind, i, j in members
            ]
            cylinder = next((labels[i] or f"Y{i}" for kind, i, _ in members if kind == "y"), None)
            lengths = [self.lengths[m] for m in members if m in self.lengths]
            result.append(Pack(
                id=len(result), pieces=pieces, lower=min(p.lower for p in pieces),
                upper=max(p.upper for p in pieces), cylinder=cylinder,
                length_sup=max(lengths) if lengths else None,
            ))
        return result

    def pack_map(self) -> Dict[Tuple, int]:
        mapping: Dict[Tuple, int] = {}
        for n, members in enumerate(sorted((sorted(c) for c in nx.connected_components(self.graph)),
                                           key=lambda c: c[0])):
            for key in members:
                mapping[key] = n
        return mapping

    def pack_at(self, p: int, z: complex, mapping: Dict[Tuple, int]) -> Optional[int]:
        i = self.index.locate(p, z)
        if i is None:
            return None
        j = self.interval(self.structure.cells[i].value(z))
        if j is None:
            return None
        return mapping.get(("c", i, j))


def extract_packs(structure: LevelFunction, surface: Optional[FlatSurface] = None) -> List[Pack]:
    """
    Packs of a level function.

    Cells are cut at the critical levels (nodes, singular vertices and
    special segments); pieces swept by the same level curves are joined,
    and neighbouring intervals of a cell are joined when the critical level
    between them is a clean closed curve there.
    """
    table = _PackTable(structure, surface)
    packs = table.packs()
    logger.info(f"Extracted {len(packs)} packs at {len(table.levels)} critical levels")
    return packs


def compare_coarseness(first: LevelFunction, second: LevelFunction, surface: FlatSurface,
                       samples: int = 400, seed: Optional[int] = None) -> CoarsenessVerdict:
    """
    Compare the pack subdivisions of two level functions on one surface.

    The first is coarser when every pack of the second lies inside a single
    pack of the first, tested on sampled points.

    Raises:
        ValueError: the level functions belong to different surfaces
    """
    digest = surface_digest(surface)
    for structure in (first, second):
        if structure.digest and structure.digest != digest:
            raise ValueError("level functions live on different surfaces")
    if first.k != second.k:
        raise ValueError("level functions belong to different k")
    atlas = get_atlas(surface)
    rng = np.random.default_rng(settings.KDIFF_SEED if seed is None else seed)
    tables = [_PackTable(first, surface), _PackTable(second, surface)]
    maps = [t.pack_map() for t in tables]
    forward: Dict[int, set] = {}
    backward: Dict[int, set] = {}
    parallel = True
    used = 0
    areas = np.array([signed_area(poly) for poly in atlas.polys])
    charts = rng.choice(len(atlas.polys), size=samples, p=areas / areas.sum())
    for p in charts:
        p = int(p)
        poly = atlas.polys[p]
        z = _random_point(rng, poly) if is_convex(poly) else None
        if z is None:
            xs = [v.real for v in poly]
            ys = [v.imag for v in poly]
            for _ in range(100):
                w = complex(rng.uniform(min(xs), max(xs)), rng.uniform(min(ys), max(ys)))
                if atlas.shape(p).contains(ShapelyPoint(w.real, w.imag)):
                    z = w
                    break
        if z is None:
            continue
        ids = [t.pack_at(p, z, m) for t, m in zip(tables, maps)]
        if ids[0] is None or ids[1] is None:
            continue
        used += 1
        forward.setdefault(ids[0], set()).add(ids[1])
        backward.setdefault(ids[1], set()).add(ids[0])
        g1 = complex(first.cells[tables[0].index.locate(p, z)].gradient)
        g2 = complex(second.cells[tables[1].index.locate(p, z)].gradient)
        if abs(cross(g1, g2)) > 1e-7:
            parallel = False
    first_coarser = all(len(s) == 1 for s in backward.values())
    second_coarser = all(len(s) == 1 for s in forward.values())
    if first_coarser and second_coarser:
        relation = "equivalent"
    elif first_coarser:
        relation = "coarser"
    elif second_coarser:
        relation = "finer"
    else:
        relation = "incomparable"
    return CoarsenessVerdict(relation=relation, level_equivalent=parallel and relation == "equivalent", samples=used)


# Full construction


def _arithmetic_gate(surface: FlatSurface) -> None:
    atlas = get_atlas(surface)
    conical = [vc for vc in atlas.classes if vc.singular and vc.order > -surface.k and not vc.on_boundary]
    if len(conical) < 2:
        return
    verdict = check_period_field(periods(surface), surface.k)
    if verdict.verdict != "rational_after_common_factor":
        raise RefusalError(
            f"odd k={surface.k}: the periods are not a common multiple of Q(zeta_{surface.k}) coordinates "
            f"(period {verdict.failing_index} fails); quasi-Strebel structures are only constructed under "
            f"this arithmetic condition"
        )


def _as_surface(source: Union[FlatSurface, RationalKDifferential]) -> Tuple[FlatSurface, Optional[RationalKDifferential]]:
    if isinstance(source, RationalKDifferential):
        return build_flat_model(source), source
    return source, None


def build_quasi_strebel(source: Union[FlatSurface, RationalKDifferential], budget: Optional[float] = None,
                        workers: Optional[int] = None) -> LevelFunction:
    """
    Construct a quasi-Strebel structure.

    Cuts off the infinite cylinders, decomposes the rest into tiles, fills
    every tile, assembles and validates the level function.

    Args:
        source: admissible differential or its flat surface
        budget: length budget for critical rays
        workers: concurrency cap

    Returns:
        Validated LevelFunction on the (uncut) surface

    Raises:
        RefusalError: odd k without rational period coordinates, or odd k >= 5 with non-triangular pieces
        DecompositionError: the cut, tiling or assembly failed, or validation did not pass
    """
    return strebel_report(source, budget, workers).structure


def strebel_report(source: Union[FlatSurface, RationalKDifferential], budget: Optional[float] = None,
                   workers: Optional[int] = None, samples: Optional[int] = None) -> StrebelReport:
    """Full construction with its validation report and packs."""
    surface, psi = _as_surface(source)
    k = surface.k
    if k % 2 == 1:
        _arithmetic_gate(surface)
    reduced, infinite = cut_cylinders(surface)
    decomposition = decompose(reduced, budget=budget, workers=workers)
    fragments = fill_decomposition(reduced, decomposition, workers)
    structure = assemble_level_function(fragments, surface, cylinders=infinite, tiles=decomposition.tiles)
    validation = validate_structure(structure, surface, psi, samples=samples, workers=workers)
    if not validation.passed:
        failed = [c.name + (f" ({c.detail})" if c.detail else "") for c in validation.clauses if not c.passed]
        raise DecompositionError(f"structure failed validation: {'; '.join(failed)}")
    packs = extract_packs(structure, surface)
    logger.info(f"Built quasi-Strebel structure with {len(decomposition.tiles)} tiles and {len(packs)} packs")
    return StrebelReport(structure=structure, validation=validation, packs=packs, tiles=len(decomposition.tiles))
