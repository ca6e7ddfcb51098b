import cmath
import math

import numpy as np
import pytest

from app.core.config import settings
from app.core.exceptions import RegularPointError, SchemaError, SingularPointError
from app.models.differential import RationalKDifferential
from app.services import differential_service as ds


def _psi(k, leading, zeros=(), poles=()):
    return RationalKDifferential(
        k=k,
        leading=leading,
        zeros=[{"z": z, "m": m} for z, m in zeros],
        poles=[{"z": z, "m": m} for z, m in poles],
    )


def test_cubic_example_orders_sum_to_minus_2k(cubic_differential):
    table = ds.analyze_singularities(cubic_differential)
    orders = sorted(s.order for s in table)
    assert orders == [-3, -3, -2, 2]
    assert sum(orders) == -2 * cubic_differential.k


def test_cone_angles_only_for_conical_points(cubic_differential):
    table = {s.label: s for s in ds.analyze_singularities(cubic_differential)}
    assert table["Z0"].conical
    assert table["Z0"].cone_angle == pytest.approx(10 * math.pi / 3)
    assert table["P0"].cone_angle == pytest.approx(2 * math.pi / 3)
    assert not table["P1"].conical and table["P1"].cone_angle is None
    assert table["inf"].at_infinity


def test_residues_at_order_minus_k_poles(cubic_differential):
    table = {s.label: s for s in ds.analyze_singularities(cubic_differential)}
    assert complex(table["P1"].residue) == pytest.approx(0.25j)
    assert complex(table["inf"].residue) == pytest.approx(-1j)
    assert table["Z0"].residue is None


def test_cubic_example_is_admissible(cubic_differential):
    report = ds.is_admissible(cubic_differential)
    assert report.admissible
    assert report.reasons == []


def test_high_order_pole_at_infinity_is_not_admissible():
    psi = _psi(2, 1, zeros=[(0, 1)])
    assert psi.order_at_infinity == -5
    report = ds.is_admissible(psi)
    assert not report.admissible
    assert any(reason.startswith("inf") for reason in report.reasons)


def test_residue_off_the_admissible_line_is_reported():
    psi = _psi(2, 1j, poles=[(0, 2)])
    report = ds.is_admissible(psi)
    assert not report.admissible
    assert len(report.reasons) == 2


def test_band_differential_is_admissible(band_differential):
    assert ds.is_admissible(band_differential).admissible


def test_normal_form_kinds(cubic_differential):
    assert ds.classify_normal_form(cubic_differential, 0j).kind == "PowerForm"
    form = ds.classify_normal_form(cubic_differential, -1 + 0j)
    assert form.kind == "ResidueForm"
    assert complex(form.r) == pytest.approx(0.25j)


def test_higher_pole_invariant():
    # (z - 1) / z^4 dz^2 has square root i/z^2 - i/(2z) + ...
    psi = _psi(2, 1, zeros=[(1, 1)], poles=[(0, 4)])
    form = ds.classify_normal_form(psi, 0j)
    assert form.kind == "HigherPoleForm"
    assert form.m == -4
    assert complex(form.r) == pytest.approx(-0.25)


def test_regular_point_has_no_normal_form(cubic_differential):
    with pytest.raises(RegularPointError):
        ds.classify_normal_form(cubic_differential, 0.5j)


def test_residue_is_invariant_under_inversion(cubic_differential):
    pulled = ds.pullback_mobius(cubic_differential, 0, 1, 1, 0)
    assert ds.residue_at_pole(pulled, -1 + 0j) == pytest.approx(0.25j)
    assert ds.residue_at_pole(pulled, 0j) == pytest.approx(-1j)
    assert pulled.order_at_infinity == 2


def test_dual_and_scale_keep_the_divisor(cubic_differential):
    star = ds.dual(cubic_differential)
    assert complex(star.leading) == pytest.approx(-1)
    assert star.zeros == cubic_differential.zeros
    with pytest.raises(ValueError):
        ds.scale(cubic_differential, 0)


def test_holonomy_around_zero_is_order_mod_k(cubic_differential):
    loop = [0.3 * cmath.exp(2j * math.pi * t / 64) for t in range(64)]
    assert ds.holonomy_of_z_loop(cubic_differential, loop) == 2


def test_holonomy_around_order_minus_k_pole_is_trivial(cubic_differential):
    loop = [-1 + 0.3 * cmath.exp(2j * math.pi * t / 64) for t in range(64)]
    assert ds.holonomy_of_z_loop(cubic_differential, loop) == 0


def test_root_at_singularity_raises(cubic_differential):
    with pytest.raises(SingularPointError):
        ds.kth_root_branch(cubic_differential, 1 + 0j)


def test_segment_integral_of_square_root():
    psi = _psi(2, 1, zeros=[(0, 1)])
    value, _ = ds.integrate_segment(psi, 0j, 1 + 0j)
    assert value == pytest.approx(2.0 / 3.0, abs=1e-9)


def test_malformed_document_is_a_schema_error():
    with pytest.raises(SchemaError, match="leading"):
        ds.parse_differential({"k": 3, "zeros": []})


def test_duplicate_positions_are_rejected():
    with pytest.raises(SchemaError):
        ds.parse_differential({"k": 2, "leading": [1, 0], "zeros": [{"z": [0, 0], "m": 1}],
                               "poles": [{"z": [0, 0], "m": 1}]})


def _random_differential(rng, k):
    zeros = [(complex(*rng.normal(size=2)), int(rng.integers(1, 7))) for _ in range(rng.integers(0, 5))]
    poles = [(complex(*rng.normal(size=2)), int(rng.integers(1, 7))) for _ in range(rng.integers(0, 5))]
    return _psi(k, complex(*rng.normal(size=2)), zeros=zeros, poles=poles)


@pytest.mark.parametrize("k", range(2, 7))
def test_random_differentials_have_order_sum_minus_2k(k):
    rng = np.random.default_rng(settings.KDIFF_SEED + k)
    for _ in range(20):
        psi = _random_differential(rng, k)
        assert sum(s.order for s in ds.analyze_singularities(psi)) == -2 * k


@pytest.mark.parametrize("case", range(10))
def test_random_holonomy_is_order_mod_k(case):
    rng = np.random.default_rng(settings.KDIFF_SEED + case)
    loop = [0.5 * cmath.exp(2j * math.pi * t / 128) for t in range(128)]
    for _ in range(10):
        k = int(rng.integers(2, 9))
        m = int(rng.choice([m for m in range(-12, 13) if m != 0]))
        other = int(rng.choice([-3, -2, -1, 1, 2, 3]))
        points = [(0j, m), (2 + 1j * rng.uniform(-1, 1), other)]
        psi = _psi(k, complex(*rng.normal(size=2)),
                   zeros=[(z, o) for z, o in points if o > 0], poles=[(z, -o) for z, o in points if o < 0])
        assert ds.holonomy_of_z_loop(psi, loop) == m % k


def test_residues_survive_random_coordinate_changes(cubic_differential):
    rng = np.random.default_rng(settings.KDIFF_SEED)
    changes = 0
    while changes < 20:
        a, b, c, d = (complex(*rng.normal(size=2)) for _ in range(4))
        if abs(a * d - b * c) < 0.3 or abs(c) < 0.1:
            continue
        changes += 1
        pulled = ds.pullback_mobius(cubic_differential, a, b, c, d)
        # z = -1 and z = infinity in the new coordinate
        w_pole = (d * -1 - b) / (a - c * -1)
        assert ds.residue_at_pole(pulled, w_pole) == pytest.approx(0.25j, rel=1e-9)
        assert ds.residue_at_pole(pulled, -d / c) == pytest.approx(-1j, rel=1e-9)
