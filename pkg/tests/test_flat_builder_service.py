import math

import pytest
from scipy.special import gamma

from app.core.exceptions import RefusalError
from app.services import differential_service as ds
from app.services import flat_model_service as fm
from app.services.flat_builder_service import area_by_quadrature, build_flat_model, reconcile_edges
from app.services.differential_service import parse_differential
from tests.conftest import load_doc

# side of the square that dz^2/(z^3 - z) maps the upper half-plane onto
LEMNISCATE_SIDE = gamma(0.25) ** 2 / (2.0 * math.sqrt(2.0 * math.pi))


@pytest.fixture(scope="module")
def cubic_model():
    psi = parse_differential(load_doc("cubic_differential.json"))
    return psi, build_flat_model(psi)


def _double_square(k: int = 2) -> dict:
    square = [[0, 0], [1, 0], [1, 1], [0, 1]]
    return {
        "k": k,
        "polygons": [{"vertices": square}, {"vertices": square}],
        "gluings": [{"from": [0, i], "to": [1, i], "rot": k // 2} for i in range(4)],
    }


def test_cubic_example_builds_a_sphere(cubic_model):
    psi, surface = cubic_model
    atlas = fm.get_atlas(surface)
    assert atlas.euler_characteristic == 2
    assert atlas.gauss_bonnet_defect() == pytest.approx(0.0, abs=1e-6)
    assert len(surface.cylinders) == 2


def test_cubic_example_cone_angles_match_the_singularity_table(cubic_model):
    psi, surface = cubic_model
    classes = {vc.label: vc for vc in fm.vertex_classes(surface)}
    conical = [s for s in ds.analyze_singularities(psi) if s.conical]
    assert conical
    for singularity in conical:
        assert classes[singularity.label].angle == pytest.approx(singularity.cone_angle, rel=1e-6)
        assert classes[singularity.label].order == singularity.order


def test_glued_edges_have_equal_lengths(cubic_model):
    _, surface = cubic_model
    atlas = fm.get_atlas(surface)
    for gluing in surface.gluings:
        a = atlas.edge(tuple(gluing.edge_a))
        b = atlas.edge(tuple(gluing.edge_b))
        assert a.length == pytest.approx(b.length, rel=1e-10)


def test_reconciled_edges_close_every_triangle():
    sides = [[((0, 1), 1.0), ((1, 2), 1.0), ((0, 2), -1.0)]]
    integrals = {(0, 1): 1.0 + 0j, (1, 2): 1j, (0, 2): 1.0 + 1.0j + 3e-9}
    fixed = reconcile_edges(sides, integrals)
    assert abs(fixed[(0, 1)] + fixed[(1, 2)] - fixed[(0, 2)]) < 1e-14
    assert abs(fixed[(0, 2)] - integrals[(0, 2)]) < 3e-9


def test_band_differential_has_no_conical_points(band_differential):
    surface = build_flat_model(band_differential)
    assert fm.get_atlas(surface).euler_characteristic == 2


def test_non_admissible_differential_is_refused():
    psi = parse_differential({"k": 2, "leading": [1, 0], "poles": [{"z": [0, 0], "m": 3}]})
    with pytest.raises(RefusalError):
        build_flat_model(psi)


def test_quadrature_area_matches_the_pillowcase():
    # scaled so that the two squares are unit squares
    psi = parse_differential({
        "k": 2,
        "leading": [1.0 / LEMNISCATE_SIDE ** 2, 0],
        "poles": [{"z": [0, 0], "m": 1}, {"z": [1, 0], "m": 1}, {"z": [-1, 0], "m": 1}],
    })
    pillowcase = fm.ingest_gluing(_double_square())
    assert fm.measure(pillowcase).area == pytest.approx(2.0)
    assert area_by_quadrature(psi) == pytest.approx(fm.measure(pillowcase).area, rel=1e-3)


def test_quadrature_area_is_infinite_with_a_cylinder(cubic_differential):
    assert area_by_quadrature(cubic_differential) == math.inf


def test_cylinder_circumference_is_2pi_times_the_kth_root_of_the_residue(cubic_model):
    psi, surface = cubic_model
    # residue = i^k a gives 2 pi |a|^(1/k)
    expected = {
        s.label: 2 * math.pi * abs(complex(s.residue) / 1j ** psi.k) ** (1 / psi.k)
        for s in ds.analyze_singularities(psi) if s.residue is not None
    }
    assert expected == pytest.approx({"P1": 2 * math.pi * 0.25 ** (1 / 3), "inf": 2 * math.pi})
    assert {c.label: c.circumference for c in surface.cylinders} == pytest.approx(expected, rel=1e-6)
