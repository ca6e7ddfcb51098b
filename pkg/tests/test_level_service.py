import cmath
import math

import numpy as np
import pytest

from app.core.config import settings
from app.core.exceptions import DecompositionError
from app.models.structure import Tile
from app.services import level_service as ls
from app.utils.geometry import centroid, incenter, point_segment_distance, signed_area

OMEGA = cmath.exp(1j * math.pi / 3)


def _triangle() -> Tile:
    return Tile(index=0, kind="Triangle", vertices=[0j, 1 + 0j, OMEGA])


def _trapezoid() -> Tile:
    return Tile(index=0, kind="Trapezoid", vertices=[0j, 3 + 0j, 2 + 1j, 1 + 1j])


def test_triangle_fill_is_distance_to_the_boundary():
    cells = ls.fill_tile(_triangle(), 3)
    assert len(cells) == 3
    incenter = (0 + 1 + OMEGA) / 3
    for cell in cells:
        assert abs(complex(cell.gradient)) == pytest.approx(1.0)
        assert cell.value(incenter) == pytest.approx(math.sqrt(3) / 6)
    assert min(cell.value(0j) for cell in cells) == pytest.approx(0.0, abs=1e-12)


def test_triangle_switching_set_is_three_bisectors():
    structure = ls.tile_structure(_triangle(), 3)
    switching = [s for s in structure.segments if s.kind == "switching"]
    assert len(switching) == 3
    valencies = sorted(node.valency for node in structure.nodes)
    assert valencies == [1, 1, 1, 3]
    center = next(node for node in structure.nodes if node.valency == 3)
    assert center.tag == "secondary"
    assert complex(center.z) == pytest.approx((1 + OMEGA) / 3)


def test_triangle_level_curve_closes_with_three_switching_points():
    structure = ls.tile_structure(_triangle(), 3)
    curve = ls.trace_level_curve(structure, 0, 0.5 + 0.1j)
    assert curve.closed
    assert curve.level == pytest.approx(0.1)
    assert curve.switching_points == 3
    assert curve.length == pytest.approx(3 * (1 - 0.2 * math.sqrt(3)), rel=1e-9)


def test_symmetric_trapezoid_level_curve_has_four_switching_points():
    structure = ls.tile_structure(_trapezoid(), 2)
    curve = ls.trace_level_curve(structure, 0, 1.5 + 0.1j)
    assert curve.closed
    assert curve.switching_points == 4


def test_point_outside_every_cell_raises():
    structure = ls.tile_structure(_triangle(), 3)
    with pytest.raises(ValueError):
        ls.trace_level_curve(structure, 0, 5 + 5j)


def test_odd_k_tile_with_mixed_orientation_is_rejected():
    tile = Tile(index=0, kind="Trapezoid", vertices=[0j, 2 + 0j, 1.5 + 0.5j * math.sqrt(3), 0.5 + 0.5j * math.sqrt(3)])
    with pytest.raises(DecompositionError):
        ls.fill_tile(tile, 3)


def test_degenerate_tile_is_rejected():
    tile = Tile(index=0, kind="Triangle", vertices=[0j, 1 + 0j, 2 + 0j])
    with pytest.raises(DecompositionError):
        ls.fill_tile(tile, 2)


def test_assembly_matches_offsets_between_fragments():
    left = ls.distance_cells([0j, 1 + 0j, 1 + 1j, 1j], tile=0)
    right = [c.model_copy(update={"offset": c.offset + 5.0}) for c in
             ls.distance_cells([1 + 0j, 2 + 0j, 2 + 1j, 1 + 1j], tile=1)]
    for cell in left + right:
        assert cell.chart == -1
    structure = ls.assemble_level_function([left, right], k=2)
    assert structure.k == 2
    right_cells = [c for c in structure.cells if c.tile == 1]
    assert min(c.value(1.5 + 0.5j) for c in right_cells) == pytest.approx(0.5)


def test_surface_digest_is_stable(quartic_square_surface):
    assert ls.surface_digest(quartic_square_surface) == ls.surface_digest(quartic_square_surface.model_copy())


def _perimeter(vertices) -> float:
    return sum(abs(vertices[i] - vertices[i - 1]) for i in range(len(vertices)))


def _assert_switching_on_bisectors(structure, curve, perimeter):
    assert curve.closed
    assert curve.length <= perimeter
    switching = [s for s in structure.segments if s.kind == "switching"]
    for _, point in curve.points[1:-1]:
        gap = min(point_segment_distance(complex(point), complex(s.start), complex(s.end))[0] for s in switching)
        assert gap < 1e-9


@pytest.mark.parametrize("case", range(50))
def test_random_triangle_fills_close_on_the_bisectors(case):
    rng = np.random.default_rng(settings.KDIFF_SEED + case)
    while True:
        a, b, c = (complex(*rng.uniform(0, 1, 2)) for _ in range(3))
        if abs(signed_area([a, b, c])) > 0.05:
            break
    vertices = [a, b, c] if signed_area([a, b, c]) > 0 else [a, c, b]
    structure = ls.tile_structure(Tile(index=0, kind="Triangle", vertices=vertices), 2)
    center, _ = incenter(*vertices)
    middle = (vertices[0] + vertices[1]) / 2
    for t in (0.3, 0.6, 0.9):
        curve = ls.trace_level_curve(structure, 0, center + t * (middle - center))
        assert curve.switching_points == 3
        _assert_switching_on_bisectors(structure, curve, _perimeter(vertices))
        # every switching point is equidistant from two sides
        for _, point in curve.points[1:-1]:
            distances = sorted(point_segment_distance(complex(point), vertices[i - 1], vertices[i])[0] for i in range(3))
            assert distances[1] - distances[0] < 1e-9


@pytest.mark.parametrize("case", range(50))
def test_random_trapezoid_fills_close_on_the_bisectors(case):
    rng = np.random.default_rng(settings.KDIFF_SEED + case)
    width, height = rng.uniform(1, 3), rng.uniform(0.3, 1.5)
    left, right = width * rng.uniform(0.05, 0.45), width * rng.uniform(0.55, 0.95)
    vertices = [0j, complex(width, 0), complex(right, height), complex(left, height)]
    structure = ls.tile_structure(Tile(index=0, kind="Trapezoid", vertices=vertices), 2)
    for cell in structure.cells:
        curve = ls.trace_level_curve(structure, 0, centroid([complex(z) for z in cell.vertices]))
        assert curve.switching_points in (3, 4)
        _assert_switching_on_bisectors(structure, curve, _perimeter(vertices))
