import math

import pytest

from app.core.exceptions import GluingError, SchemaError
from app.services import flat_model_service as fm
from tests.conftest import load_doc


def _classes(surface):
    return {vc.label: vc for vc in fm.vertex_classes(surface)}


def test_quartic_square_has_order_four_zero(quartic_square_surface):
    classes = _classes(quartic_square_surface)
    assert classes["I"].order == 4
    assert classes["I"].angle == pytest.approx(4 * math.pi)
    assert len(classes["I"].corners) == 4
    for label in "ABCD":
        assert classes[label].order == -3
        assert classes[label].angle == pytest.approx(math.pi / 2)


def test_cubic_example_cone_angles(cubic_cylinders_surface):
    classes = _classes(cubic_cylinders_surface)
    assert classes["A"].angle == pytest.approx(10 * math.pi / 3)
    assert classes["A"].junctions == 2
    assert classes["B"].order == -2


def test_order_twelve_zero_collects_cylinder_junctions(order_twelve_surface):
    classes = _classes(order_twelve_surface)
    assert classes["I"].order == 12
    assert classes["I"].angle == pytest.approx(8 * math.pi)
    assert len(classes["I"].corners) == 6


def test_torus_has_one_regular_vertex(torus):
    classes = fm.vertex_classes(torus)
    assert len(classes) == 1
    assert classes[0].order == 0
    assert classes[0].angle == pytest.approx(2 * math.pi)
    assert fm.get_atlas(torus).euler_characteristic == 0


def test_pillowcase_has_four_order_minus_two_points(pillowcase):
    classes = fm.vertex_classes(pillowcase)
    assert sorted(vc.order for vc in classes) == [-2, -2, -2, -2]
    assert all(vc.angle == pytest.approx(math.pi) for vc in classes)


def test_euler_characteristic_of_spheres(cubic_cylinders_surface, order_twelve_surface, quartic_square_surface):
    for surface in (cubic_cylinders_surface, order_twelve_surface, quartic_square_surface):
        atlas = fm.get_atlas(surface)
        assert atlas.euler_characteristic == 2
        assert atlas.gauss_bonnet_defect() == pytest.approx(0.0, abs=1e-9)


def test_boundary_surface_skips_angle_checks(torus_piece):
    classes = fm.vertex_classes(torus_piece)
    assert classes
    assert all(vc.on_boundary for vc in classes)


def test_length_mismatch_is_rejected():
    doc = load_doc("torus_surface.json")
    doc["polygons"][0]["vertices"] = [[0, 0], [1, 0], [1, 1], [0, 1.5]]
    with pytest.raises(GluingError):
        fm.ingest_gluing(doc)


def test_wrong_rotation_is_rejected():
    doc = load_doc("torus_surface.json")
    doc["gluings"][0]["rot"] = 1
    with pytest.raises(GluingError, match="rotation"):
        fm.ingest_gluing(doc)


def test_contradicting_mark_is_rejected():
    doc = load_doc("quartic_square_surface.json")
    doc["marks"][0]["order"] = 3
    with pytest.raises(GluingError, match="cone angle"):
        fm.ingest_gluing(doc)


def test_unglued_edge_is_rejected():
    doc = load_doc("torus_surface.json")
    doc["gluings"] = doc["gluings"][:1]
    with pytest.raises(GluingError, match="not glued"):
        fm.ingest_gluing(doc)


def test_clockwise_polygon_is_rejected():
    doc = load_doc("torus_surface.json")
    doc["polygons"][0]["vertices"].reverse()
    with pytest.raises(GluingError, match="counterclockwise"):
        fm.ingest_gluing(doc)


def test_missing_field_is_a_schema_error():
    with pytest.raises(SchemaError, match="polygons"):
        fm.ingest_gluing({"k": 2})


def test_document_round_trip(quartic_square_surface):
    again = fm.ingest_gluing(fm.emit_surface(quartic_square_surface))
    assert again == quartic_square_surface


def test_area_and_path_length(torus, cubic_cylinders_surface):
    assert fm.measure(torus).area == pytest.approx(1.0)
    assert math.isinf(fm.measure(cubic_cylinders_surface).area)
    report = fm.measure(torus, path=[(0, [0.1 + 0.1j, 0.9 + 0.1j, 0.9 + 0.9j])])
    assert report.canonical_length == pytest.approx(1.6)


def test_path_outside_chart_is_rejected(torus):
    with pytest.raises(ValueError):
        fm.measure(torus, path=[(0, [0.5 + 0.5j, 2 + 2j])])


def test_transition_inverse_round_trip():
    t = fm.Transition(4, 1, 2 + 1j)
    z = 0.3 - 0.7j
    assert t.inverse()(t(z)) == pytest.approx(z)
    assert t.compose(t.inverse())(z) == pytest.approx(z)


def test_periods_of_quartic_square_are_rational(quartic_square_surface):
    values = fm.periods(quartic_square_surface)
    assert values
    verdict = fm.check_period_field(values, 4)
    assert verdict.verdict == "rational_after_common_factor"


def test_period_field_detects_rational_gate(gate_rational):
    verdict = fm.check_period_field(fm.periods(gate_rational), 3)
    assert verdict.verdict == "rational_after_common_factor"


def test_period_field_rejects_irrational_gate(gate_irrational):
    verdict = fm.check_period_field(fm.periods(gate_irrational), 3)
    assert verdict.verdict == "not_detected"
    assert verdict.failing_index is not None


def test_periods_need_two_conical_points(torus):
    with pytest.raises(ValueError):
        fm.periods(torus)
