"""
Service that builds the flat model of a rational k-differential.

The z-plane is triangulated (Delaunay on the singular points, small Steiner
rings around conical points, horizontal closed loops around order -k poles)
and every triangle is mapped to its W-chart by integrating a tracked branch of
the k-th root along its edges. Each chart is the straight-chord triangle of
the W-images of its vertices; rotation indices come from branch bookkeeping.
"""
import cmath
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.spatial import Delaunay
from shapely.geometry import Point as ShapelyPoint
from shapely.geometry import Polygon as ShapelyPolygon

from app.core.config import settings
from app.core.exceptions import IntegrationError, NumericBudgetError, RefusalError
from app.models.differential import RationalKDifferential
from app.models.surface import BoundaryEdge, Cylinder, FlatSurface, Gluing, Mark, Polygon
from app.services import differential_service as ds
from app.services.flat_model_service import ingest_gluing
from app.utils.geometry import signed_area, zeta

logger = logging.getLogger(__name__)

INF = -1  # point index of infinity

Window = Tuple[float, float, float, float]  # xmin, xmax, ymin, ymax


class _Point:
    """Triangulation vertex in the z-plane."""

    def __init__(self, z: complex, label: Optional[str] = None, order: int = 0, loop: Optional[int] = None):
        self.z = z
        self.label = label
        self.order = order
        self.loop = loop


def _inside(window: Window, z: complex) -> bool:
    xmin, xmax, ymin, ymax = window
    return xmin < z.real < xmax and ymin < z.imag < ymax


def _horizontal_loop(psi: RationalKDifferential, center: complex, start: complex,
                     residue: complex, count: int, label: str) -> List[complex]:
    """
    Sample a closed horizontal trajectory around an order -k pole.

    Integrates dz/ds = 1/y, dy/ds = (1/k) sum m_a/(z - a) over one period
    L = 2 pi |a|^(1/k) (residue = i^k a) and returns count points at equal
    flat spacing.
    """
    k = psi.k
    a = residue / (1j ** k)
    period = 2.0 * math.pi * abs(a) ** (1.0 / k)
    principal = ds.kth_root_branch(psi, start, 0)
    candidates = [principal * zeta(k, j) for j in range(k)]
    offset = start - center
    y0 = min(candidates, key=lambda y: abs((y * offset).real) / abs(y * offset))
    points = psi.finite_points

    def rhs(_s, state):
        z = complex(state[0], state[1])
        y = complex(state[2], state[3])
        dz = 1.0 / y
        dy = sum(m / (z - p) for p, m in points) / k
        return [dz.real, dz.imag, dy.real, dy.imag]

    solution = solve_ivp(
        rhs, (0.0, period), [start.real, start.imag, y0.real, y0.imag],
        method="DOP853", rtol=1e-11, atol=1e-13, dense_output=True,
    )
    if not solution.success:
        raise IntegrationError(f"horizontal loop around {label} failed: {solution.message}")
    end = complex(solution.y[0, -1], solution.y[1, -1])
    if abs(end - start) > 1e-6 * abs(offset):
        raise IntegrationError(f"horizontal loop around {label} did not close (gap {abs(end - start):.2e})")
    samples = solution.sol(np.linspace(0.0, period, count, endpoint=False))
    return [complex(x, y) for x, y in zip(samples[0], samples[1])]


def _ring(center: complex, radius: float, count: int, phase: float = 0.0) -> List[complex]:
    return [center + radius * cmath.exp(1j * (phase + 2.0 * math.pi * j / count)) for j in range(count)]


def _collect_points(psi: RationalKDifferential, window: Optional[Window]) -> Tuple[List[_Point], List[List[int]], Optional[complex], Dict]:
    k = psi.k
    singular = [(label, z, m) for label, z, m in ds.labels(psi) if z is not None]
    if window is not None:
        singular = [s for s in singular if _inside(window, s[1])]
        for label, _, m in singular:
            if m <= -k:
                raise RefusalError(f"windowed model cannot contain {label} of order {m}")
    points: List[_Point] = []
    loops: List[List[int]] = []
    info: Dict = {"loop_labels": [], "outer_loop": None}
    positions = [z for _, z, _ in singular]

    def nearest(z: complex) -> float:
        others = [abs(z - w) for w in positions if w != z]
        if window is not None:
            xmin, xmax, ymin, ymax = window
            others += [z.real - xmin, xmax - z.real, z.imag - ymin, ymax - z.imag]
        return min(others) if others else 1.0

    for label, z, m in singular:
        radius = settings.RING_RADIUS_FACTOR * nearest(z)
        if m > -k:
            points.append(_Point(z, label, m))
            count = max(settings.RING_MIN_POINTS, int(2 * (m + k) / k) + 2)
            points.extend(_Point(w) for w in _ring(z, radius, count, phase=0.1))
        else:
            residue = ds.residue_at_pole(psi, z)
            loop = _horizontal_loop(psi, z, z + radius, residue, settings.LOOP_POINTS, label)
            start = len(points)
            points.extend(_Point(w, loop=len(loops)) for w in loop)
            loops.append(list(range(start, len(points))))
            info["loop_labels"].append(label)

    center: Optional[complex] = None
    if window is not None:
        xmin, xmax, ymin, ymax = window
        points.extend(_Point(complex(x, y)) for x, y in ((xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)))
        return points, loops, center, info

    zs = np.array([p.z for p in points]) if points else np.array([0j])
    center = complex(np.mean(zs))
    outer = 2.0 * float(np.max(np.abs(zs - center))) + 1.0
    o = psi.order_at_infinity
    if o > -k:
        count = max(8, int(2 * (o + k) / k) + 3)
        points.extend(_Point(w) for w in _ring(center, outer, count, phase=0.05))
    elif o == -k:
        residue = ds.residue_at_pole(psi, None)
        loop = _horizontal_loop(psi, center, center + outer, residue, settings.LOOP_POINTS, "inf")
        start = len(points)
        points.extend(_Point(w, loop=len(loops)) for w in loop)
        loops.append(list(range(start, len(points))))
        info["loop_labels"].append("inf")
        info["outer_loop"] = len(loops) - 1
    return points, loops, center, info


def _ccw(points: List[_Point], tri: Sequence[int]) -> Tuple[int, int, int]:
    a, b, c = tri
    if signed_area([points[a].z, points[b].z, points[c].z]) < 0:
        return a, c, b
    return a, b, c


def reconcile_edges(sides: Sequence[Sequence[Tuple[Tuple[int, int], complex]]],
                    integrals: Dict[Tuple[int, int], complex]) -> Dict[Tuple[int, int], complex]:
    """
    Smallest correction of the edge integrals that closes every triangle.

    Each triangle contributes the row sum_e c_e * I_e = 0. The minimal-norm
    least-squares correction keeps one vector per edge, so both sides of a
    gluing get the same length.
    """
    keys = sorted(integrals)
    column = {key: index for index, key in enumerate(keys)}
    matrix = np.zeros((len(sides), len(keys)), dtype=complex)
    for t, row in enumerate(sides):
        for key, c in row:
            matrix[t, column[key]] += c
    values = np.array([integrals[key] for key in keys], dtype=complex)
    correction, *_ = np.linalg.lstsq(matrix, matrix @ values, rcond=None)
    fixed = values - correction
    left = float(np.max(np.abs(matrix @ fixed))) if len(sides) else 0.0
    logger.debug(
        f"Reconciled {len(keys)} edge integrals, largest correction "
        f"{float(np.max(np.abs(correction))) if len(keys) else 0.0:.2e}, closure left {left:.2e}"
    )
    return {key: complex(fixed[column[key]]) for key in keys}


def build_flat_model(psi: RationalKDifferential, window: Optional[Window] = None) -> FlatSurface:
    """
    Flat model of Psi as a surface of W-triangles.

    Args:
        psi: rational k-differential, admissible unless a window is given
        window: optional (xmin, xmax, ymin, ymax) truncation of the z-plane

    Returns:
        Validated FlatSurface; order -k poles become infinite cylinders

    Raises:
        RefusalError: non-admissible input without a window
        IntegrationError: path integration or loop continuation failed
        NumericBudgetError: triangulation did not resolve a horizontal loop
    """
    k = psi.k
    if window is None:
        report = ds.is_admissible(psi)
        if not report.admissible:
            raise RefusalError("flat model needs admissible singularities: " + "; ".join(report.reasons))
    points, loops, center, info = _collect_points(psi, window)
    if len(points) < 3:
        raise RefusalError("not enough points to triangulate")
    coords = np.array([[p.z.real, p.z.imag] for p in points])
    delaunay = Delaunay(coords)
    loop_shapes = [ShapelyPolygon([(points[i].z.real, points[i].z.imag) for i in loop]) for loop in loops]
    outer_loop = info["outer_loop"]

    triangles: List[Tuple[int, int, int]] = []
    for simplex in delaunay.simplices:
        tri = _ccw(points, [int(i) for i in simplex])
        centroid = sum(points[i].z for i in tri) / 3
        spot = ShapelyPoint(centroid.real, centroid.imag)
        keep = True
        for index, shape in enumerate(loop_shapes):
            inside = shape.contains(spot)
            if (index == outer_loop and not inside) or (index != outer_loop and inside):
                keep = False
        if keep:
            triangles.append(tri)

    edge_owners: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}
    for t, tri in enumerate(triangles):
        for e in range(3):
            u, v = tri[e], tri[(e + 1) % 3]
            edge_owners.setdefault((min(u, v), max(u, v)), []).append((t, e))
    for index, loop in enumerate(loops):
        for a, b in zip(loop, loop[1:] + loop[:1]):
            if (min(a, b), max(a, b)) not in edge_owners:
                raise NumericBudgetError(
                    f"triangulation does not resolve the horizontal loop around {info['loop_labels'][index]}"
                )

    # Outer triangles to infinity
    conical_infinity = window is None and psi.order_at_infinity > -k
    outer: List[Tuple[int, int, int]] = []
    if conical_infinity:
        for key, owners in list(edge_owners.items()):
            if len(owners) == 1:
                t, e = owners[0]
                a, b = triangles[t][e], triangles[t][(e + 1) % 3]
                outer.append((b, a, INF))
    all_triangles = triangles + outer

    def position(i: int) -> Optional[complex]:
        return None if i == INF else points[i].z

    def ray_direction(i: int) -> complex:
        d = points[i].z - center
        return d / abs(d)

    def reference_point(u: int, v: int) -> complex:
        if v == INF:
            return points[u].z + ray_direction(u) * abs(points[u].z - center)
        return 0.5 * (points[u].z + points[v].z)

    integrals: Dict[Tuple[int, int], complex] = {}

    def edge_key(u: int, v: int) -> Tuple[int, int]:
        if v == INF or u == INF:
            return (v if u == INF else u, INF)
        return (min(u, v), max(u, v))

    def edge_integral(key: Tuple[int, int]) -> complex:
        if key not in integrals:
            u, v = key
            if v == INF:
                value, _ = ds.integrate_ray(psi, points[u].z, ray_direction(u), reference=abs(points[u].z - center))
            else:
                value, _ = ds.integrate_segment(psi, points[u].z, points[v].z)
            integrals[key] = value
        return integrals[key]

    def interior_point(tri: Tuple[int, int, int]) -> complex:
        if INF not in tri:
            return sum(points[i].z for i in tri) / 3
        b, a, _ = tri
        za, zb = points[a].z, points[b].z
        normal = (zb - za) * -1j / abs(zb - za)
        return 0.5 * (za + zb) + normal * 0.25 * abs(zb - za)

    branch_of: Dict[Tuple[int, Tuple[int, int]], int] = {}
    sides: List[List[Tuple[Tuple[int, int], complex]]] = []
    for t, tri in enumerate(all_triangles):
        inner = interior_point(tri)
        y_inner = ds.kth_root_branch(psi, inner, 0)
        row = []
        for e in range(3):
            u, v = tri[e], tri[(e + 1) % 3]
            key = edge_key(u, v)
            ref = reference_point(*key)
            y_cont = ds.continue_root(psi, inner, ref, y_inner)
            y_edge = ds.kth_root_branch(psi, ref, 0)
            j = round(cmath.phase(y_cont / y_edge) * k / (2 * math.pi)) % k
            branch_of[(t, key)] = j
            sign = 1.0 if key == (u, v) else -1.0
            row.append((key, sign * zeta(k, j)))
        closure = abs(sum(c * edge_integral(key) for key, c in row))
        perimeter = sum(abs(edge_integral(key)) for key, _ in row)
        if closure > settings.CLOSURE_RESIDUAL_TOL * perimeter:
            raise IntegrationError(f"W-triangle {t} does not close (residual {closure:.2e})")
        sides.append(row)

    reconciled = reconcile_edges(sides, integrals)
    polygons: List[Polygon] = []
    for t, row in enumerate(sides):
        vertices = [0j]
        for key, c in row[:2]:
            vertices.append(vertices[-1] + c * reconciled[key])
        if signed_area(vertices) <= 0:
            raise IntegrationError(f"W-triangle {t} is not positively oriented; refine the triangulation")
        polygons.append(Polygon(vertices=vertices))

    gluings: List[Gluing] = []
    cylinder_edges: Dict[int, List[Tuple[int, int, int, int]]] = {}
    boundary: List[BoundaryEdge] = []
    owners: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}
    for t, tri in enumerate(all_triangles):
        for e in range(3):
            owners.setdefault(edge_key(tri[e], tri[(e + 1) % 3]), []).append((t, e))
    for key, pair in owners.items():
        if len(pair) == 2:
            (t, e), (s, f) = pair
            rot = (branch_of[(s, key)] - branch_of[(t, key)]) % k
            gluings.append(Gluing(edge_a=(t, e), edge_b=(s, f), rot=rot))
            continue
        t, e = pair[0]
        u, v = all_triangles[t][e], all_triangles[t][(e + 1) % 3]
        loop_index = points[u].loop if u != INF else None
        if loop_index is not None and v != INF and points[v].loop == loop_index:
            cylinder_edges.setdefault(loop_index, []).append((t, e, u, v))
        else:
            boundary.append(BoundaryEdge(edge=(t, e)))

    cylinders: List[Cylinder] = []
    for loop_index, entries in sorted(cylinder_edges.items()):
        by_start = {u: (t, e, v) for t, e, u, v in entries}
        start = entries[0][2]
        ordered = []
        current = start
        for _ in range(len(entries)):
            t, e, v = by_start[current]
            ordered.append((t, e))
            current = v
        circumference = sum(
            abs(complex(polygons[t].vertices[(e + 1) % 3]) - complex(polygons[t].vertices[e]))
            for t, e in ordered
        )
        cylinders.append(Cylinder(
            circumference=circumference, edges=ordered, label=info["loop_labels"][loop_index],
        ))

    marks: List[Mark] = []
    for t, tri in enumerate(all_triangles):
        for corner, i in enumerate(tri):
            if i == INF:
                marks.append(Mark(vertex=(t, corner), label="inf", order=psi.order_at_infinity))
            elif points[i].label is not None:
                marks.append(Mark(vertex=(t, corner), label=points[i].label, order=points[i].order))

    surface = FlatSurface(
        k=k, polygons=polygons, gluings=gluings, marks=marks,
        cylinders=cylinders, boundary=boundary,
    )
    logger.info(
        f"Built flat model with {len(polygons)} charts, {len(gluings)} gluings, "
        f"{len(cylinders)} cylinders"
    )
    return ingest_gluing(surface)


def area_by_quadrature(psi: RationalKDifferential, radial_nodes: int = 160, angular_nodes: int = 720) -> float:
    """
    Area of Psi by direct quadrature of |R|^(2/k) over the z-plane.

    The plane is split by the weights |z-a|^-2 / sum_b |z-b|^-2 into one
    polar chart per finite singular point. Radii r = rho s^k near the point
    and r = rho / s^k beyond rho make the power singularities smooth in s.

    Returns:
        The area, or inf when some pole has order <= -k
    """
    k = psi.k
    points = psi.finite_points
    if not points:
        raise ValueError("area quadrature needs a finite singular point")
    if psi.order_at_infinity <= -k or any(m <= -k for _, m in points):
        return math.inf
    centers = np.array([a for a, _ in points])
    log_lead = math.log(abs(complex(psi.leading)))

    def density(z: np.ndarray) -> np.ndarray:
        total = np.full(z.shape, log_lead)
        for a, m in points:
            total += m * np.log(np.abs(z - a))
        return np.exp(2.0 * total / k)

    nodes, weights = np.polynomial.legendre.leggauss(radial_nodes)
    s = 0.5 * (nodes + 1.0)
    ws = 0.5 * weights
    theta = np.linspace(0.0, 2.0 * math.pi, angular_nodes, endpoint=False)
    dtheta = 2.0 * math.pi / angular_nodes
    area = 0.0
    for index, a in enumerate(centers):
        others = np.abs(np.delete(centers, index) - a)
        rho = 0.5 * float(others.min()) if len(others) else 1.0
        for inner in (True, False):
            if inner:
                r = rho * s ** k
                dr = rho * k * s ** (k - 1)
            else:
                r = rho / s ** k
                dr = rho * k / s ** (k + 1)
            z = a + r[:, None] * np.exp(1j * theta[None, :])
            inverse = 1.0 / np.abs(z[..., None] - centers[None, None, :]) ** 2
            share = inverse[..., index] / inverse.sum(axis=-1)
            integrand = density(z) * share * (r * dr)[:, None]
            area += float(np.sum(integrand * ws[:, None]) * dtheta)
    return area
