import cmath
import math

import pytest

from app.core.exceptions import RefusalError
from app.models.structure import Component
from app.services.decompose_service import cut_cylinders, decompose, split_trapezoid, tile_component
from app.services.level_service import fill_tile
from app.utils.geometry import signed_area


def _tile_area(decomposition):
    return sum(signed_area([complex(z) for z in t.vertices]) for t in decomposition.tiles if t.kind != "Cylinder")


def test_split_keeps_symmetric_part_on_the_left():
    parts = split_trapezoid([0j, 4 + 0j, 2 + 1j, 1 + 1j], 1e-9)
    assert len(parts) == 2
    symmetric, triangle = parts
    assert len(symmetric) == 4
    assert len(triangle) == 3
    assert min(z.real for z in triangle) == pytest.approx(2.0)
    assert sum(signed_area(p) for p in parts) == pytest.approx(2.5)


def test_symmetric_trapezoid_is_not_split():
    parts = split_trapezoid([0j, 3 + 0j, 2 + 1j, 1 + 1j], 1e-9)
    assert len(parts) == 1


def test_cut_cylinders_turns_loops_into_boundary(cubic_cylinders_surface):
    reduced, infinite = cut_cylinders(cubic_cylinders_surface)
    assert [t.label for t in infinite] == ["C1", "C2"]
    assert all(math.isinf(t.height) for t in infinite)
    assert reduced.cylinders == []
    assert {b.label for b in reduced.boundary} == {"C1", "C2"}


def test_decompose_refuses_infinite_cylinders(cubic_cylinders_surface):
    with pytest.raises(ValueError):
        decompose(cubic_cylinders_surface)


def test_quartic_square_tiles_cover_the_square(quartic_square_surface):
    decomposition = decompose(quartic_square_surface)
    assert decomposition.complete
    assert len(decomposition.components) == 4
    assert _tile_area(decomposition) == pytest.approx(9.0)
    assert all(t.kind in ("Triangle", "Trapezoid") for t in decomposition.tiles)


def test_cubic_example_is_tiled_by_triangles(cubic_cylinders_surface):
    reduced, _ = cut_cylinders(cubic_cylinders_surface)
    decomposition = decompose(reduced)
    assert decomposition.tiles
    assert all(t.kind == "Triangle" for t in decomposition.tiles)
    assert _tile_area(decomposition) == pytest.approx(1.5 * math.sqrt(3) / 2)


def test_order_twelve_example_tiles_cover_six_squares(order_twelve_surface):
    reduced, infinite = cut_cylinders(order_twelve_surface)
    assert len(infinite) == 2
    decomposition = decompose(reduced)
    assert _tile_area(decomposition) == pytest.approx(6.0)


def test_torus_piece_is_one_cylinder_component(torus_piece):
    decomposition = decompose(torus_piece)
    kinds = [t.kind for t in decomposition.tiles]
    assert kinds == ["Cylinder"]
    assert decomposition.tiles[0].circumference == pytest.approx(2.0)
    assert decomposition.tiles[0].height == pytest.approx(1.0)


def _rhombus(k, units):
    corner = cmath.exp(1j * math.pi * units / k)
    return [0j, 1 + 0j, 1 + corner, corner]


def test_k5_rhombus_is_tiled_by_horizontal_triangles():
    outline = _rhombus(5, 2)
    component = Component(index=0, kind="polygon", faces=[], outline=outline)
    tiles = tile_component(component, 5, [], 1e-9)
    assert [t.kind for t in tiles] == ["Triangle", "Triangle"]
    assert sum(signed_area([complex(z) for z in t.vertices]) for t in tiles) == pytest.approx(signed_area(outline))
    for tile in tiles:
        assert fill_tile(tile, 5)


@pytest.mark.parametrize("k", [5, 7])
def test_odd_k_horizontal_triangle_is_its_own_tile(k):
    apex = 0.5 + 0.5j * math.tan(math.pi / k)
    component = Component(index=0, kind="polygon", faces=[], outline=[0j, 1 + 0j, apex])
    tiles = tile_component(component, k, [], 1e-9)
    assert len(tiles) == 1
    assert tiles[0].kind == "Triangle"


def test_odd_k_component_without_horizontal_triangulation_is_refused():
    square = Component(index=3, kind="polygon", faces=[], outline=[0j, 1 + 0j, 1 + 1j, 1j])
    with pytest.raises(RefusalError):
        tile_component(square, 5, [], 1e-9)
