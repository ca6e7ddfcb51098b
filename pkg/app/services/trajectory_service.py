"""
Service for horizontal trajectories: tracing across glued charts, critical
rays from conical singularities, holonomy of loops and domains.
"""
import cmath
import logging
import math
from collections import Counter, deque
from functools import reduce
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import shapely
from scipy.integrate import solve_ivp

from app.core.config import settings
from app.core.exceptions import IntegrationError, SingularPointError
from app.models.differential import RationalKDifferential
from app.models.surface import FlatSurface
from app.models.trajectory import (
    ChartSegment,
    HolonomyElement,
    HolonomyGroup,
    LoopLeg,
    PowerReduction,
    SurfacePoint,
    Termination,
    TerminationSummary,
    Trajectory,
    TrajectorySeed,
)
from app.services import batch_service
from app.services import differential_service as ds
from app.services.flat_model_service import Atlas, get_atlas
from app.utils.geometry import angle_mod, dot, point_segment_distance, ray_segment_hit, zeta

logger = logging.getLogger(__name__)

ANGLE_EPS = 1e-9


def horizontal_direction(k: int, branch: int, dual: bool = False) -> complex:
    """Chart direction of the horizontal field with the given index (of Psi or i*Psi)."""
    base = cmath.exp(-1j * math.pi / (2 * k)) if dual else 1.0
    return base * zeta(k, branch)


def branch_of(k: int, direction: complex, dual: bool = False) -> int:
    """Index of the horizontal field a chart direction belongs to."""
    base = horizontal_direction(k, 0, dual)
    return round(cmath.phase(direction / base) * k / (2 * math.pi)) % k


class _Tracer:
    """Straight-line flow in the charts of one surface."""

    def __init__(self, surface: FlatSurface, budget: float, tol: float):
        self.atlas: Atlas = get_atlas(surface)
        self.k = surface.k
        self.budget = budget
        scale = max(1.0, self.atlas.diameter)
        self.snap = settings.SNAP_TOL * scale
        self.closure = tol * scale
        self.cell = self.atlas.diameter / settings.DENSE_GRID
        self._cells: Dict[int, Set[Tuple[int, int]]] = {}

    # Chart geometry

    def _exit(self, p: int, x: complex, d: complex):
        """First boundary feature hit by x + t d, t > 0: ('vertex', i, t) or ('edge', i, t)."""
        poly = self.atlas.polys[p]
        n = len(poly)
        best_t, best_i = math.inf, None
        for i in range(n):
            hit = ray_segment_hit(x, d, poly[i], poly[(i + 1) % n])
            if hit is None:
                continue
            t, _ = hit
            if self.snap < t < best_t:
                best_t, best_i = t, i
        vertex_t, vertex_i = math.inf, None
        for i, v in enumerate(poly):
            t = dot(v - x, d)
            if t <= self.snap or t > best_t + self.snap:
                continue
            if abs(x + t * d - v) <= self.snap and t < vertex_t:
                vertex_t, vertex_i = t, i
        if vertex_i is not None:
            return "vertex", vertex_i, vertex_t
        if best_i is None:
            raise IntegrationError(f"trajectory left polygon {p} at {x} without crossing an edge")
        return "edge", best_i, best_t

    def _pass_vertex(self, p: int, i: int, d: complex):
        """
        Continue straight through a regular vertex.

        Walks the corners counterclockwise from the arrival direction until a
        total angle of pi is swept.

        Returns:
            ('go', polygon, corner index, direction) or ('cylinder', label) or ('boundary', None)
        """
        atlas = self.atlas
        remaining = math.pi
        corner = (p, i % len(atlas.polys[p]))
        out = atlas.vertex(corner[0], corner[1] + 1) - atlas.vertex(*corner)
        alpha = angle_mod(cmath.phase(-d / out))
        for _ in range(4 * len(atlas.corner_class) + 4):
            q, j = corner
            vertex = atlas.vertex(q, j)
            out = atlas.vertex(q, j + 1) - vertex
            sector = atlas.corner_angle(q, j) - alpha
            if remaining < sector - ANGLE_EPS:
                return "go", q, j, out / abs(out) * cmath.exp(1j * (alpha + remaining))
            remaining = max(0.0, remaining - sector)
            alpha = 0.0
            incoming = atlas.edges[(q, (j - 1) % len(atlas.polys[q]))]
            if incoming.kind == "cylinder":
                if remaining < math.pi - ANGLE_EPS:
                    return "cylinder", incoming.label
                remaining = max(0.0, remaining - math.pi)
            elif incoming.kind == "boundary":
                return "boundary", incoming.label
            corner = atlas.next_corner(corner)
        raise IntegrationError(f"could not pass vertex {i} of polygon {p}")

    # Dense detection

    def _polygon_cells(self, p: int) -> Set[Tuple[int, int]]:
        if p not in self._cells:
            poly = self.atlas.polys[p]
            xs = [z.real for z in poly]
            ys = [z.imag for z in poly]
            ix = np.arange(math.floor(min(xs) / self.cell), math.floor(max(xs) / self.cell) + 1)
            iy = np.arange(math.floor(min(ys) / self.cell), math.floor(max(ys) / self.cell) + 1)
            gx, gy = np.meshgrid(ix, iy)
            inside = shapely.contains_xy(self.atlas.shape(p), (gx + 0.5) * self.cell, (gy + 0.5) * self.cell)
            self._cells[p] = {(int(a), int(b)) for a, b in zip(gx[inside], gy[inside])}
        return self._cells[p]

    def _mark(self, visits: Counter, p: int, a: complex, b: complex) -> None:
        count = max(2, int(math.ceil(2 * abs(b - a) / self.cell)) + 1)
        cells = set()
        for t in np.linspace(0.0, 1.0, count):
            z = a + t * (b - a)
            cells.add((p, math.floor(z.real / self.cell), math.floor(z.imag / self.cell)))
        visits.update(cells)

    def _dense_domain(self, visits: Counter, visited: Set[int]) -> List[int]:
        domain = []
        for p in sorted(visited):
            cells = self._polygon_cells(p)
            if not cells:
                continue
            if any(visits[(p, a, b)] < settings.DENSE_VISITS for a, b in cells):
                return []
            domain.append(p)
        return domain

    # Tracing

    def run(self, p: int, x: complex, d: complex, from_vertex: bool) -> Tuple[List[ChartSegment], Termination, float]:
        atlas = self.atlas
        p0, x0, d0 = p, x, d
        total = 0.0
        segments: List[ChartSegment] = []
        visits: Counter = Counter()
        visited: Set[int] = set()
        next_check = 64
        while True:
            if len(segments) >= settings.MAX_SEGMENTS:
                return segments, Termination(kind="LengthBudgetExhausted"), total
            kind, i, t = self._exit(p, x, d)
            if not from_vertex and p == p0 and abs(d - d0) <= 1e-9 and segments:
                proj = dot(x0 - x, d)
                if 0.0 <= proj <= t + self.snap and abs(x + proj * d - x0) <= self.closure:
                    total += proj
                    segments.append(ChartSegment(polygon=p, start=x, end=x0, cumulative=total))
                    return segments, Termination(kind="ClosedPeriodic", period=total), total
            if total + t >= self.budget:
                end = x + (self.budget - total) * d
                segments.append(ChartSegment(polygon=p, start=x, end=end, cumulative=self.budget))
                return segments, Termination(kind="LengthBudgetExhausted"), self.budget
            y = atlas.vertex(p, i) if kind == "vertex" else x + t * d
            total += t
            segments.append(ChartSegment(polygon=p, start=x, end=y, cumulative=total))
            self._mark(visits, p, x, y)
            visited.add(p)
            if kind == "vertex":
                if atlas.is_stop_vertex(p, i):
                    return segments, Termination(kind="HitSingularity", label=atlas.vertex_class(p, i).label), total
                step = self._pass_vertex(p, i, d)
                if step[0] == "cylinder":
                    return segments, Termination(kind="EnteredCylinder", label=step[1]), total
                if step[0] == "boundary":
                    return segments, Termination(kind="LeftSurface", label=step[1]), total
                _, p, j, d = step
                x = atlas.vertex(p, j)
            else:
                info = atlas.edges[(p, i)]
                if info.kind == "cylinder":
                    return segments, Termination(kind="EnteredCylinder", label=info.label), total
                if info.kind == "boundary":
                    if info.label is not None:
                        return segments, Termination(kind="EnteredCylinder", label=info.label), total
                    return segments, Termination(kind="LeftSurface"), total
                x = info.transition(y)
                d = info.transition.direction(d)
                p = info.partner[0]
            if len(segments) >= next_check:
                next_check += 128
                domain = self._dense_domain(visits, visited)
                if domain:
                    return segments, Termination(kind="DenseDetected", domain=domain), total


def _budget(surface: FlatSurface, budget: Optional[float]) -> float:
    if budget is None:
        return settings.BUDGET_FACTOR * get_atlas(surface).diameter
    if budget <= 0:
        raise ValueError("length budget must be positive")
    return budget


def trace(surface: FlatSurface, point: SurfacePoint, branch: int = 0,
          budget: Optional[float] = None, tol: Optional[float] = None,
          dual: bool = False, direction: Optional[complex] = None) -> Trajectory:
    """
    Trace the horizontal trajectory through a regular point.

    Args:
        surface: flat surface
        point: start point in a polygon chart
        branch: index of the direction field (chart direction zeta^branch)
        budget: maximal canonical length, 1000 diameters by default
        tol: closure tolerance relative to the diameter
        dual: follow the horizontal field of i*Psi instead
        direction: explicit unit chart direction overriding branch

    Returns:
        Trajectory with its termination tag

    Raises:
        ValueError: non-positive budget or point outside its polygon
        SingularPointError: point is a singular vertex
    """
    atlas = get_atlas(surface)
    length = _budget(surface, budget)
    z = complex(point.z)
    if not atlas.locate(point.polygon, z):
        raise ValueError(f"start point {z} is not in polygon {point.polygon}")
    for i, v in enumerate(atlas.polys[point.polygon]):
        if abs(v - z) <= settings.SNAP_TOL * max(1.0, atlas.diameter):
            if atlas.is_stop_vertex(point.polygon, i):
                raise SingularPointError(f"start point is the singularity {atlas.vertex_class(point.polygon, i).label}")
    d = direction / abs(direction) if direction is not None else horizontal_direction(surface.k, branch, dual)
    tracer = _Tracer(surface, length, tol or settings.CLOSURE_TOL)
    segments, termination, total = tracer.run(point.polygon, z, d, from_vertex=False)
    return Trajectory(
        start=point, branch=branch_of(surface.k, d, dual), direction=d,
        segments=segments, termination=termination, length=total,
    )


def trace_batch(surface: FlatSurface, seeds: Sequence[TrajectorySeed],
                budget: Optional[float] = None, workers: Optional[int] = None) -> List[Trajectory]:
    """Trace a batch of seeds concurrently; results in seed order."""
    get_atlas(surface)

    def job(seed: TrajectorySeed) -> Trajectory:
        return trace(surface, SurfacePoint(polygon=seed.polygon, z=seed.z), seed.branch, budget, dual=seed.dual)

    return batch_service.run_batch(job, seeds, workers)


def termination_summary(trajectories: Sequence[Trajectory]) -> TerminationSummary:
    counts = Counter(t.termination.kind for t in trajectories)
    exhausted = [i for i, t in enumerate(trajectories) if t.termination.kind == "LengthBudgetExhausted"]
    if exhausted:
        logger.warning(f"{len(exhausted)} of {len(trajectories)} trajectories exhausted the length budget")
    return TerminationSummary(total=len(trajectories), counts=dict(sorted(counts.items())), budget_exhausted=exhausted)


# Critical trajectories


def critical_rays(surface: FlatSurface, dual: bool = False, incoming: bool = False):
    """
    Horizontal rays leaving every conical singularity.

    Yields one entry per ray as (label, polygon, corner, chart direction,
    cylinder label or None, incoming flag). Rays pointing into an attached
    cylinder carry the cylinder label.
    """
    atlas = get_atlas(surface)
    k = surface.k
    bases = [(horizontal_direction(k, 0, dual), False)]
    if incoming:
        bases.append((-horizontal_direction(k, 0, dual), True))
    rays = []
    for vc in atlas.classes:
        if not vc.singular:
            continue
        for p, i in vc.corners:
            vertex = atlas.vertex(p, i)
            out = atlas.vertex(p, i + 1) - vertex
            alpha0 = cmath.phase(out)
            sector = atlas.corner_angle(p, i)
            before = atlas.edges[(p, (i - 1) % len(atlas.polys[p]))]
            closed_end = before.kind != "glued"
            seen: List[float] = []
            for base, is_incoming in bases:
                for j in range(k):
                    d = base * zeta(k, j)
                    rel = angle_mod(cmath.phase(d) - alpha0)
                    if rel > 2 * math.pi - ANGLE_EPS:
                        rel = 0.0
                    if any(abs(rel - s) <= ANGLE_EPS for s in seen):
                        continue
                    inside = rel < sector - ANGLE_EPS or (closed_end and abs(rel - sector) <= ANGLE_EPS)
                    into_cylinder = (
                        before.kind == "cylinder" and sector + ANGLE_EPS < rel < sector + math.pi - ANGLE_EPS
                    )
                    if inside or into_cylinder:
                        seen.append(rel)
                        label = before.label if into_cylinder else None
                        rays.append((vc.label, p, i, d, label, is_incoming and k % 2 == 1))
    return rays


def critical_graph(surface: FlatSurface, budget: Optional[float] = None, dual: bool = False,
                   incoming: bool = False, workers: Optional[int] = None) -> List[Trajectory]:
    """
    Trace all critical rays.

    Args:
        surface: flat surface
        budget: length budget per ray
        dual: rays of i*Psi
        incoming: also trace the rays that end at a singularity (differs for odd k)

    Returns:
        One trajectory per ray; saddle connections end with HitSingularity
    """
    length = _budget(surface, budget)
    atlas = get_atlas(surface)
    k = surface.k
    rays = critical_rays(surface, dual, incoming)

    def job(ray) -> Trajectory:
        label, p, i, d, cylinder, is_incoming = ray
        start = SurfacePoint(polygon=p, z=atlas.vertex(p, i))
        if cylinder is not None:
            return Trajectory(
                start=start, branch=branch_of(k, d, dual), direction=d, source=label, incoming=is_incoming,
                termination=Termination(kind="EnteredCylinder", label=cylinder),
            )
        tracer = _Tracer(surface, length, settings.CLOSURE_TOL)
        segments, termination, total = tracer.run(p, atlas.vertex(p, i), d, from_vertex=True)
        return Trajectory(
            start=start, branch=branch_of(k, d, dual), direction=d, segments=segments,
            termination=termination, length=total, source=label, incoming=is_incoming,
        )

    result = batch_service.run_batch(job, rays, workers)
    saddles = sum(1 for t in result if t.termination.kind == "HitSingularity")
    logger.info(f"Critical graph: {len(result)} rays, {saddles} saddle connections")
    return result


# Holonomy


def _crossing_index(atlas: Atlas, p: int, i: int) -> int:
    """Branch change when leaving polygon p through glued edge i."""
    info = atlas.edges[(p, i)]
    rot = atlas.surface.gluings[info.gluing].rot
    return -rot if info.side == "a" else rot


def _cylinder_step(atlas: Atlas, p: int, i: int, q: int, j: int) -> int:
    """Branch change between consecutive edges of a cylinder loop."""
    e_p = atlas.edges[(p, i)].vector
    e_q = atlas.edges[(q, j)].vector
    rot = round(cmath.phase(e_q / e_p) * atlas.k / (2 * math.pi))
    return -rot


def holonomy_of_loop(surface: FlatSurface, legs: Sequence[Union[LoopLeg, Tuple[int, Sequence[complex]]]]) -> HolonomyElement:
    """
    Holonomy of a closed chart path.

    Args:
        surface: flat surface
        legs: consecutive pieces (polygon, polyline); consecutive legs meet on a glued edge

    Returns:
        HolonomyElement with index = -(signed sum of crossed rotations) mod k

    Raises:
        SingularPointError: the loop passes within the snap tolerance of a singularity
        ValueError: legs do not form a closed chart path
    """
    atlas = get_atlas(surface)
    k = surface.k
    snap = settings.SNAP_TOL * max(1.0, atlas.diameter)
    pieces = [(leg.polygon, [complex(z) for z in leg.points]) if isinstance(leg, LoopLeg)
              else (leg[0], [complex(z) for z in leg[1]]) for leg in legs]
    if not pieces:
        raise ValueError("loop has no legs")
    for p, points in pieces:
        for z in points:
            if not atlas.locate(p, z):
                raise ValueError(f"loop point {z} is not in polygon {p}")
        for a, b in zip(points[:-1], points[1:]):
            for i, v in enumerate(atlas.polys[p]):
                if atlas.vertex_class(p, i).singular and point_segment_distance(v, a, b)[0] <= snap:
                    raise SingularPointError(f"loop touches the singularity {atlas.vertex_class(p, i).label}")
    index = 0
    count = len(pieces)
    for n in range(count):
        p, points = pieces[n]
        q, next_points = pieces[(n + 1) % count]
        if count == 1:
            if abs(points[0] - points[-1]) > snap:
                raise ValueError("single-leg loop is not closed")
            break
        end = points[-1]
        crossing = None
        for i in range(len(atlas.polys[p])):
            info = atlas.edges[(p, i)]
            if info.kind != "glued" or info.partner[0] != q:
                continue
            if point_segment_distance(end, info.start, info.end)[0] > snap:
                continue
            if abs(info.transition(end) - next_points[0]) > 1e3 * snap:
                continue
            crossing = i
            break
        if crossing is None:
            raise ValueError(f"legs {n} and {(n + 1) % count} do not meet on a glued edge")
        index += _crossing_index(atlas, p, crossing)
    return HolonomyElement(k=k, index=index % k)


def vertex_holonomy(surface: FlatSurface, label: str) -> HolonomyElement:
    """Holonomy of a small counterclockwise loop around a vertex class."""
    atlas = get_atlas(surface)
    vc = atlas.class_by_label(label)
    if vc.on_boundary:
        raise ValueError(f"vertex '{label}' lies on the boundary")
    start = vc.corners[0]
    corner = start
    index = 0
    for _ in range(len(vc.corners) + 1):
        p, i = corner
        edge = (p, (i - 1) % len(atlas.polys[p]))
        info = atlas.edges[edge]
        nxt = atlas.next_corner(corner)
        if info.kind == "glued":
            index += _crossing_index(atlas, *edge)
        elif info.kind == "cylinder":
            index += _cylinder_step(atlas, edge[0], edge[1], nxt[0], nxt[1])
        corner = nxt
        if corner == start:
            break
    return HolonomyElement(k=surface.k, index=index % surface.k)


def holonomy_group(surface: FlatSurface, domain: Optional[Sequence[int]] = None) -> HolonomyGroup:
    """
    Subgroup of G_k generated by holonomies of loops inside a domain.

    The dual graph of the domain's polygons (glued edges, and consecutive
    cylinder edges when the whole surface is used) is spanned by a BFS tree;
    every non-tree adjacency closes one generating cycle.

    Args:
        surface: flat surface
        domain: polygon indices, the whole surface when None

    Returns:
        HolonomyGroup with generator gcd(k, cycle indices)
    """
    atlas = get_atlas(surface)
    k = surface.k
    allowed = set(range(len(atlas.polys))) if domain is None else set(domain)
    adjacency: Dict[int, List[Tuple[int, int]]] = {p: [] for p in allowed}
    for (p, i), info in atlas.edges.items():
        if p in allowed and info.kind == "glued" and info.partner[0] in allowed:
            adjacency[p].append((info.partner[0], _crossing_index(atlas, p, i)))
    if domain is None:
        for cylinder in surface.cylinders:
            loop = [tuple(ref) for ref in cylinder.edges]
            for t, (p, i) in enumerate(loop):
                q, j = loop[(t + 1) % len(loop)]
                step = _cylinder_step(atlas, p, i, q, j)
                adjacency[p].append((q, step))
                adjacency[q].append((p, -step))
    potential: Dict[int, int] = {}
    cycles: List[int] = []
    for root in sorted(allowed):
        if root in potential:
            continue
        potential[root] = 0
        queue = deque([root])
        while queue:
            p = queue.popleft()
            for q, step in adjacency[p]:
                if q not in potential:
                    potential[q] = potential[p] + step
                    queue.append(q)
                else:
                    cycles.append((potential[p] + step - potential[q]) % k)
    generator = reduce(math.gcd, cycles, k)
    return HolonomyGroup(k=k, generator=generator)


def power_reduction(source: Union[FlatSurface, RationalKDifferential]) -> PowerReduction:
    """
    FullForm when the holonomy is trivial, HalfForm when it is {1, -1} for even k.

    For a differential on the sphere the group is generated by the local
    holonomies zeta^m around its singularities.
    """
    if isinstance(source, RationalKDifferential):
        k = source.k
        orders = [m for _, _, m in ds.labels(source)]
        group = HolonomyGroup(k=k, generator=reduce(math.gcd, orders, k))
    else:
        k = source.k
        group = holonomy_group(source)
    if group.trivial:
        kind = "FullForm"
    elif group.order == 2 and k % 2 == 0:
        kind = "HalfForm"
    else:
        kind = "None"
    return PowerReduction(kind=kind, group=group)


# Trajectories of a differential in the z-plane


def trace_differential(psi: RationalKDifferential, z0: complex, branch: int = 0,
                       budget: float = 10.0, samples: int = 256, dual: bool = False) -> Trajectory:
    """
    Trace a horizontal trajectory of Psi directly in the z-plane.

    Integrates dz/ds = 1/y, dy/ds = (1/k) sum m_a/(z - a) in canonical
    length s and reports the polyline at `samples` equally spaced lengths.

    Returns:
        Trajectory with polygon index -1 on every segment
    """
    if budget <= 0:
        raise ValueError("length budget must be positive")
    k = psi.k
    y0 = ds.kth_root_branch(psi, z0, branch)
    if dual:
        y0 *= cmath.exp(1j * math.pi / (2 * k))
    points = psi.finite_points
    scale = 1.0 + max((abs(a) for a, _ in points), default=0.0)
    snap = 1e-6 * scale
    escape = 1e3 * scale
    v0 = 1.0 / y0

    def rhs(_s, state):
        z = complex(state[0], state[1])
        y = complex(state[2], state[3])
        dz = 1.0 / y
        dy = sum(m / (z - a) for a, m in points) / k
        return [dz.real, dz.imag, dy.real, dy.imag]

    events = []
    for a, _ in points:
        def near(_s, state, a=a):
            return abs(complex(state[0], state[1]) - a) - snap
        near.terminal = True
        events.append(near)

    def far(_s, state):
        return abs(complex(state[0], state[1])) - escape
    far.terminal = True
    events.append(far)

    def section(_s, state):
        return dot(complex(state[0], state[1]) - z0, v0)
    section.direction = 1.0
    events.append(section)

    solution = solve_ivp(
        rhs, (0.0, budget), [z0.real, z0.imag, y0.real, y0.imag],
        method="DOP853", rtol=1e-12, atol=1e-14, dense_output=True, events=events,
    )
    if solution.status == -1:
        raise IntegrationError(f"trajectory integration failed: {solution.message}")
    end = float(solution.t[-1])
    termination = Termination(kind="LengthBudgetExhausted")
    for s_hit in solution.t_events[-1]:
        if s_hit <= 1e-9 * budget:
            continue
        z_hit = complex(*solution.sol(s_hit)[:2])
        if abs(z_hit - z0) <= 1e-7 * scale and s_hit <= end:
            end = float(s_hit)
            termination = Termination(kind="ClosedPeriodic", period=end)
            break
    if termination.kind != "ClosedPeriodic":
        for index, (a, _) in enumerate(points):
            if len(solution.t_events[index]):
                label = next(lbl for lbl, pos, _ in ds.labels(psi) if pos is not None and abs(pos - a) == 0)
                termination = Termination(kind="HitSingularity", label=label)
        if len(solution.t_events[len(points)]):
            o = psi.order_at_infinity
            kind = "EnteredCylinder" if o <= -k else "HitSingularity"
            termination = Termination(kind=kind, label="inf")
    grid = np.linspace(0.0, end, samples + 1)
    values = solution.sol(grid)
    zs = values[0] + 1j * values[1]
    segments = [
        ChartSegment(polygon=-1, start=complex(zs[j]), end=complex(zs[j + 1]), cumulative=float(grid[j + 1]))
        for j in range(samples)
    ]
    return Trajectory(
        start=SurfacePoint(polygon=0, z=z0), branch=branch % k, direction=v0 / abs(v0),
        segments=segments, termination=termination, length=end,
    )
