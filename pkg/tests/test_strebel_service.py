import cmath
import math

import pytest

from app.core.exceptions import RefusalError
from app.models.structure import Tile
from app.services import level_service as ls
from app.services import strebel_service as ss


@pytest.fixture(scope="module")
def quartic_report(quartic_square_surface):
    return ss.strebel_report(quartic_square_surface, samples=40)


def _triangle_structure():
    tile = Tile(index=0, kind="Triangle", vertices=[0j, 1 + 0j, cmath.exp(1j * math.pi / 3)])
    return ls.tile_structure(tile, 3)


def test_quartic_square_structure_validates(quartic_report):
    assert quartic_report.validation.passed
    assert quartic_report.tiles > 0
    assert quartic_report.packs
    assert quartic_report.structure.k == 4


def test_build_returns_the_validated_structure(quartic_square_surface, quartic_report):
    structure = ss.build_quasi_strebel(quartic_square_surface)
    assert structure.digest == quartic_report.structure.digest
    assert len(structure.cells) == len(quartic_report.structure.cells)


def test_irrational_gate_is_refused(gate_irrational):
    with pytest.raises(RefusalError):
        ss.strebel_report(gate_irrational)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["cubic_cylinders_surface", "order_twelve_surface"])
def test_surfaces_with_infinite_cylinders_are_constructed(request, name):
    surface = request.getfixturevalue(name)
    report = ss.strebel_report(surface, samples=40)
    assert report.validation.passed
    assert len(report.structure.cylinder_cells) == len(surface.cylinders)


@pytest.mark.slow
def test_rational_gate_is_constructed(gate_rational):
    report = ss.strebel_report(gate_rational, samples=40)
    assert report.validation.passed


def test_structure_is_equivalent_to_itself(quartic_square_surface, quartic_report):
    structure = quartic_report.structure
    verdict = ss.compare_coarseness(structure, structure, quartic_square_surface, samples=100)
    assert verdict.relation == "equivalent"
    assert verdict.level_equivalent
    assert verdict.samples > 0


def test_structures_on_different_surfaces_are_not_compared(quartic_square_surface, quartic_report):
    foreign = quartic_report.structure.model_copy(update={"digest": "elsewhere"})
    with pytest.raises(ValueError):
        ss.compare_coarseness(quartic_report.structure, foreign, quartic_square_surface)


def test_single_tile_passes_local_clauses():
    report = ss.validate_structure(_triangle_structure(), samples=20)
    for name in ("cells", "branch", "closed", "switching_directions"):
        assert report.clause(name).passed, report.clause(name).detail
    # corners are valency-1 ends that only a surface can explain
    assert not report.clause("nodes").passed
    assert not report.passed


def test_rotated_gradient_fails_the_branch_clause():
    structure = _triangle_structure()
    bent = structure.cells[0].model_copy(update={"gradient": complex(structure.cells[0].gradient) * cmath.exp(0.1j)})
    structure = structure.model_copy(update={"cells": [bent] + structure.cells[1:]})
    report = ss.validate_structure(structure, samples=5)
    assert not report.clause("branch").passed
    assert report.clause("branch").value == pytest.approx(0.1, abs=1e-9)


def test_admissibility_clause_with_a_differential(cubic_differential):
    report = ss.validate_structure(_triangle_structure(), psi=cubic_differential, samples=5)
    assert report.clause("admissible").passed


def test_packs_of_the_quartic_square(quartic_square_surface, quartic_report):
    packs = ss.extract_packs(quartic_report.structure, quartic_square_surface)
    assert len(packs) == len(quartic_report.packs)
    assert len({pack.id for pack in packs}) == len(packs)
    for pack in packs:
        assert pack.pieces
        assert pack.lower < pack.upper
        for piece in pack.pieces:
            assert pack.lower - 1e-9 <= piece.lower < piece.upper <= pack.upper + 1e-9
