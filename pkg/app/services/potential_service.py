"""
Service for logarithmic potentials of root measures: grids, the discrete
Levy form, support skeletons and raster export.
"""
import logging
import math
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import pdist, squareform

from app.core.config import settings
from app.models.hs import (
    PositivityReport,
    PotentialGrid,
    RootMeasure,
    SwitchingTree,
    TreeEdge,
    TreeNode,
)
from app.services import document_service
from app.utils.geometry import angle_distance

logger = logging.getLogger(__name__)

RASTER_HEADER = struct.Struct("<ii4d")


def boundary_radius(measure: RootMeasure, tol: Optional[float] = None) -> float:
    """
    Smallest R with |u(z) - log|z|| <= tol * max(1, log|z|) for all |z| >= R.

    Uses |u(z) - log|z|| <= -log(1 - A/|z|) with A the largest atom modulus.
    """
    tol = tol or settings.LEVY_BOUNDARY_TOL
    reach = float(np.max(np.abs(np.asarray(measure.atoms, dtype=complex))))
    if reach == 0.0:
        return 0.0

    def excess(r: float) -> float:
        return -math.log1p(-reach / r) - tol * max(1.0, math.log(r))

    upper = reach / -math.expm1(-tol)
    if excess(upper) >= 0.0:
        return upper
    return float(brentq(excess, reach * (1.0 + 1e-9), upper, xtol=1e-12 * reach))


def default_window(measure: RootMeasure, margin: float = 0.5) -> Tuple[float, float, float, float]:
    """
    Bounding box of the atoms grown by `margin` times its size on every side,
    widened to the square of half-side boundary_radius so the boundary clause
    of levy_positivity can hold.
    """
    atoms = np.asarray(measure.atoms, dtype=complex)
    xmin, xmax = float(atoms.real.min()), float(atoms.real.max())
    ymin, ymax = float(atoms.imag.min()), float(atoms.imag.max())
    size = max(xmax - xmin, ymax - ymin, 1.0)
    # slack for the grid shift of potential_grid
    reach = 1.02 * boundary_radius(measure)
    return (
        min(xmin - margin * size, -reach), max(xmax + margin * size, reach),
        min(ymin - margin * size, -reach), max(ymax + margin * size, reach),
    )


def _potential(atoms: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    grid = xs[None, :] + 1j * ys[:, None]
    total = np.zeros(grid.shape)
    for a in atoms:
        total += np.log(np.abs(grid - a))
    return total / len(atoms)


def potential_grid(measure: RootMeasure, window: Optional[Tuple[float, float, float, float]] = None,
                   resolution: Optional[int] = None) -> PotentialGrid:
    """
    u(z) = integral of log|z - a| over the measure, on a grid with square cells.

    The window height is widened to a whole number of cells. When an atom
    sits on a grid node the grid is shifted by a fraction of a cell once.

    Raises:
        ValueError: resolution below 64, empty window, or an atom on a node after the retry
    """
    resolution = resolution or settings.POTENTIAL_RESOLUTION
    if resolution < 64:
        raise ValueError(f"resolution {resolution} is below 64")
    xmin, xmax, ymin, ymax = window or default_window(measure)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"window {window} is empty")
    h = (xmax - xmin) / (resolution - 1)
    rows = int(math.ceil((ymax - ymin) / h)) + 1
    ymax = ymin + (rows - 1) * h
    atoms = np.asarray(measure.atoms, dtype=complex)
    jittered = False
    for attempt in range(2):
        xs = xmin + h * np.arange(resolution)
        ys = ymin + h * np.arange(rows)
        nearest = min(np.min(np.abs(xs[None, :] + 1j * ys[:, None] - a)) for a in atoms)
        if nearest > 1e-12 * max(1.0, h):
            break
        if attempt == 1:
            raise ValueError("an atom lies on a grid node after jitter")
        logger.debug("Atom on a grid node; shifting the grid")
        shift = h * (math.sqrt(5) - 1) / 4
        xmin, xmax, ymin, ymax = xmin + shift, xmax + shift, ymin + shift, ymax + shift
        jittered = True
    values = _potential(atoms, xs, ys)
    lap = (values[1:-1, 2:] + values[1:-1, :-2] + values[2:, 1:-1] + values[:-2, 1:-1] - 4 * values[1:-1, 1:-1])
    # 5-point Laplacian over h^2, times the cell area h^2, over 2 pi
    density = lap / (2 * math.pi)
    logger.info(f"Potential grid {resolution}x{rows}, density total {density.sum():.6f}")
    return PotentialGrid(
        window=(xmin, xmax, ymin, ymax), width=resolution, height=rows,
        values=values.tolist(), density=density.tolist(), jittered=jittered,
    )


def levy_positivity(grid: PotentialGrid, measure: RootMeasure, exclusion_cells: float = 3.0,
                    floor: float = -1e-3) -> PositivityReport:
    """
    Minimum of the discrete Levy density away from the atoms, total mass and
    the deviation of u from log|z| on the window boundary.
    """
    dx, _ = grid.spacing
    radius = exclusion_cells * dx
    atoms = np.asarray(measure.atoms, dtype=complex)
    density = np.asarray(grid.density)
    xs = grid.window[0] + dx * np.arange(1, grid.width - 1)
    ys = grid.window[2] + dx * np.arange(1, grid.height - 1)
    nodes = xs[None, :] + 1j * ys[:, None]
    distance = np.full(nodes.shape, np.inf)
    for a in atoms:
        distance = np.minimum(distance, np.abs(nodes - a))
    outside = distance > radius
    min_density = float(density[outside].min()) if outside.any() else 0.0
    values = np.asarray(grid.values)
    border = np.concatenate([values[0, :], values[-1, :], values[:, 0], values[:, -1]])
    xs_all = grid.window[0] + dx * np.arange(grid.width)
    ys_all = grid.window[2] + dx * np.arange(grid.height)
    points = np.concatenate([
        xs_all + 1j * ys_all[0], xs_all + 1j * ys_all[-1],
        xs_all[0] + 1j * ys_all, xs_all[-1] + 1j * ys_all,
    ])
    logs = np.log(np.abs(points))
    deviation = float(np.max(np.abs(border - logs) / np.maximum(1.0, np.abs(logs))))
    total = float(density.sum())
    return PositivityReport(
        min_density=min_density, total_mass=total, boundary_deviation=deviation,
        exclusion_radius=radius,
        passed=(
            min_density >= floor
            and abs(total - 1) <= settings.LEVY_MASS_TOL
            and deviation <= settings.LEVY_BOUNDARY_TOL
        ),
    )


def _trajectory_error(z: complex, direction: complex, k: int, Q: Sequence[complex], V: Sequence[complex]) -> float:
    """Angle from a line direction to the trajectories of i^k V dz^k / Q or of its dual."""
    value = (1j ** k) * P.polyval(z, np.asarray(V, dtype=complex)) / P.polyval(z, np.asarray(Q, dtype=complex))
    phase = math.atan2(value.imag, value.real)
    theta = math.atan2(direction.imag, direction.real)
    best = math.inf
    for t in (theta, theta + math.pi):
        for shift in (0.0, math.pi / 2):
            best = min(best, angle_distance(k * t + phase + shift, 2 * math.pi) / k)
    return best


def _skeleton(atoms: np.ndarray, cutoff: float) -> nx.Graph:
    """Single-linkage forest: minimum spanning tree without edges above cutoff."""
    graph = nx.Graph()
    graph.add_nodes_from(range(len(atoms)))
    if len(atoms) < 2:
        return graph
    points = np.column_stack([atoms.real, atoms.imag])
    distances = squareform(pdist(points))
    tree = minimum_spanning_tree(distances).tocoo()
    for a, b, w in zip(tree.row, tree.col, tree.data):
        if w <= cutoff:
            graph.add_edge(int(a), int(b), weight=float(w))
    return graph


def _support_ends(atoms: np.ndarray, Q: Sequence[complex], diameter: float) -> Tuple[np.ndarray, List[int]]:
    """
    Atoms extended by the roots of Q, with the indices of those roots.

    A root of Q is usually an atom itself, since Q(r) = 0 forces S(r) = 0.
    """
    coefficients = np.asarray(Q, dtype=complex)
    roots = P.polyroots(coefficients) if len(coefficients) > 1 else np.array([], dtype=complex)
    points = list(atoms)
    ends: List[int] = []
    for r in roots:
        gaps = np.abs(atoms - r)
        j = int(np.argmin(gaps))
        if gaps[j] <= 1e-9 * max(1.0, diameter) and j not in ends:
            ends.append(j)
        else:
            ends.append(len(points))
            points.append(complex(r))
    return np.asarray(points, dtype=complex), ends


def _prune(graph: nx.Graph, spur: float, keep: frozenset = frozenset()) -> None:
    """Drop short terminal chains hanging off branch nodes, except at the nodes in keep."""
    changed = True
    while changed:
        changed = False
        for leaf in [v for v in graph.nodes if graph.degree(v) == 1 and v not in keep]:
            if leaf not in graph or graph.degree(leaf) != 1:
                continue
            chain, length, current, previous = [leaf], 0.0, leaf, None
            while True:
                nxt = [u for u in graph.neighbors(current) if u != previous]
                if len(nxt) != 1:
                    break
                length += graph.edges[current, nxt[0]]["weight"]
                previous, current = current, nxt[0]
                if graph.degree(current) != 2:
                    break
                chain.append(current)
            if graph.degree(current) >= 3 and length < spur:
                graph.remove_nodes_from(chain)
                changed = True


def switching_tree(measures: Sequence[RootMeasure], Q: Sequence[complex], V: Sequence[complex], k: int,
                   threshold: float = 0.05, spur_factor: float = 3.0) -> SwitchingTree:
    """
    Skeleton of the support of the largest root measure.

    Atoms other than the roots of Q are joined by single linkage up to
    threshold * diameter, and every root of Q hangs off its nearest atom as
    an end of the support; chains of
    valency-2 atoms become edges between leaves and branch points, and each
    edge direction at its middle atom is checked against the trajectories of
    i^k V dz^k / Q and its dual.

    Raises:
        ValueError: fewer than two measures
    """
    if len(measures) < 2:
        raise ValueError("switching_tree needs measures for at least two values of n")
    measure = max(measures, key=lambda m: len(m.atoms))
    atoms = np.asarray(measure.atoms, dtype=complex)
    if len(atoms) == 1:
        return SwitchingTree(nodes=[TreeNode(z=complex(atoms[0]), valency=0)], edges=[], is_forest=True)
    diameter = float(np.max(np.abs(atoms[:, None] - atoms[None, :])))
    points, ends = _support_ends(atoms, Q, diameter)
    core = [i for i in range(len(points)) if i not in ends]
    graph = nx.relabel_nodes(_skeleton(points[core], threshold * diameter), dict(enumerate(core)))
    weights = [d["weight"] for _, _, d in graph.edges(data=True)]
    if core:
        # roots of Q are ends of the support: one edge to the nearest other atom
        for e in ends:
            gaps = np.abs(points[core] - points[e])
            j = int(np.argmin(gaps))
            graph.add_edge(e, core[j], weight=float(gaps[j]))
    if weights:
        _prune(graph, spur_factor * float(np.median(weights)), frozenset(ends))
    graph.remove_nodes_from([v for v in list(graph.nodes) if graph.degree(v) == 0])
    forest = nx.is_forest(graph) if graph.number_of_nodes() else True
    if not forest:
        logger.warning("Support skeleton has cycles")
    keys = sorted(v for v in graph.nodes if graph.degree(v) != 2)
    index = {v: i for i, v in enumerate(keys)}
    nodes = [TreeNode(z=complex(points[v]), valency=graph.degree(v)) for v in keys]
    edges: List[TreeEdge] = []
    seen = set()
    for start in keys:
        for first in graph.neighbors(start):
            if (start, first) in seen:
                continue
            path = [start, first]
            while path[-1] not in index:
                nxt = [u for u in graph.neighbors(path[-1]) if u != path[-2]]
                if not nxt:
                    break
                path.append(nxt[0])
            seen.add((path[-1], path[-2]))
            seen.add((start, first))
            middle = len(path) // 2
            lo, hi = max(0, middle - 2), min(len(path) - 1, middle + 2)
            direction = complex(points[path[hi]] - points[path[lo]])
            spot = points[path[middle]] if path[middle] not in ends else 0.5 * (points[path[lo]] + points[path[hi]])
            error = _trajectory_error(complex(spot), direction, k, Q, V) if direction else math.inf
            edges.append(TreeEdge(a=index[start], b=index.get(path[-1], index[start]), direction_error=error))
    leaves = [complex(points[v]) for v in keys if graph.degree(v) == 1]
    logger.info(f"Support skeleton: {len(nodes)} nodes, {len(edges)} edges, {len(leaves)} leaves")
    return SwitchingTree(nodes=nodes, edges=edges, is_forest=forest, leaves=leaves)


def write_raster(grid: PotentialGrid, path: Union[str, Path]) -> Path:
    """Little-endian float64 raster, row-major, after a width/height/window header."""
    header = RASTER_HEADER.pack(grid.width, grid.height, *grid.window)
    body = np.asarray(grid.values, dtype="<f8").tobytes()
    return document_service.write_bytes(path, header + body)


def read_raster(path: Union[str, Path]) -> PotentialGrid:
    data = Path(path).read_bytes()
    width, height, *window = RASTER_HEADER.unpack_from(data)
    values = np.frombuffer(data, dtype="<f8", offset=RASTER_HEADER.size).reshape(height, width)
    return PotentialGrid(window=tuple(window), width=width, height=height, values=values.tolist())
