import cmath
import math

import numpy as np
import pytest

from app.core.config import settings
from app.core.exceptions import SingularPointError
from app.models.differential import RationalKDifferential
from app.models.trajectory import LoopLeg, SurfacePoint, TrajectorySeed
from app.services import differential_service as ds
from app.services import trajectory_service as ts
from app.services.flat_model_service import ingest_gluing
from app.utils.geometry import dot
from tests.conftest import load_doc


def test_horizontal_trajectory_on_torus_closes(torus):
    trajectory = ts.trace(torus, SurfacePoint(polygon=0, z=0.3 + 0.5j))
    assert trajectory.termination.kind == "ClosedPeriodic"
    assert trajectory.termination.period == pytest.approx(1.0, abs=1e-9)


def test_dual_trajectory_on_torus_closes_on_the_diagonal(torus):
    trajectory = ts.trace(torus, SurfacePoint(polygon=0, z=0.7 + 0.25j), dual=True)
    assert trajectory.termination.kind == "ClosedPeriodic"
    assert trajectory.termination.period == pytest.approx(math.sqrt(2), abs=1e-8)


def test_irrational_slope_is_dense(parallelogram):
    trajectory = ts.trace(parallelogram, SurfacePoint(polygon=0, z=0.5 + 0.3j), dual=True)
    assert trajectory.termination.kind == "DenseDetected"
    assert trajectory.termination.domain == [0]


def test_start_at_singularity_raises(quartic_square_surface):
    with pytest.raises(SingularPointError):
        ts.trace(quartic_square_surface, SurfacePoint(polygon=0, z=0j))


def test_non_positive_budget_raises(torus):
    with pytest.raises(ValueError):
        ts.trace(torus, SurfacePoint(polygon=0, z=0.5 + 0.5j), budget=0)


def test_small_budget_is_reported(torus):
    trajectory = ts.trace(torus, SurfacePoint(polygon=0, z=0.3 + 0.5j), budget=0.5)
    assert trajectory.termination.kind == "LengthBudgetExhausted"
    assert trajectory.length == pytest.approx(0.5)


def test_batch_keeps_seed_order(torus):
    seeds = [TrajectorySeed.model_validate(s) for s in load_doc("torus_seeds.json")["seeds"]]
    trajectories = ts.trace_batch(torus, seeds, workers=2)
    assert [t.start.z for t in trajectories] == [s.z for s in seeds]
    summary = ts.termination_summary(trajectories)
    assert summary.total == 2
    assert summary.counts == {"ClosedPeriodic": 2}


def test_quartic_square_critical_rays_are_saddle_connections(quartic_square_surface):
    rays = ts.critical_graph(quartic_square_surface)
    assert rays
    assert all(r.termination.kind == "HitSingularity" for r in rays)
    assert {r.source for r in rays} == {"I", "A", "B", "C", "D"}


def test_cubic_example_critical_graph_bounds_cylinders(cubic_cylinders_surface):
    rays = ts.critical_graph(cubic_cylinders_surface)
    kinds = {r.termination.kind for r in rays}
    assert "HitSingularity" in kinds
    assert "EnteredCylinder" in kinds
    saddles = {(r.source, r.termination.label) for r in rays if r.termination.kind == "HitSingularity"}
    assert ("A", "A") in saddles


def test_loop_around_pillowcase_corner(pillowcase):
    legs = [LoopLeg.model_validate(leg) for leg in load_doc("pillowcase_loops.json")["loops"][0]]
    assert ts.holonomy_of_loop(pillowcase, legs).index == 2


def test_vertex_holonomy_is_order_mod_k(pillowcase, quartic_square_surface):
    assert ts.vertex_holonomy(pillowcase, "V0").index == 2
    assert ts.vertex_holonomy(quartic_square_surface, "I").index == 0


def test_loop_through_singularity_raises(pillowcase):
    legs = [(0, [0.25 + 0.25j, 0.5 + 0j]), (0, [0.5 + 0j, 0.25 + 0.25j])]
    with pytest.raises(SingularPointError):
        ts.holonomy_of_loop(pillowcase, legs)


def test_holonomy_groups(torus, pillowcase, quartic_square_surface):
    assert ts.holonomy_group(torus).trivial
    assert ts.holonomy_group(pillowcase).order == 2
    assert ts.holonomy_group(quartic_square_surface).order == 4


def test_power_reduction(torus, pillowcase, quartic_square_surface, band_differential):
    assert ts.power_reduction(torus).kind == "FullForm"
    assert ts.power_reduction(pillowcase).kind == "HalfForm"
    assert ts.power_reduction(quartic_square_surface).kind == "None"
    assert ts.power_reduction(band_differential).kind == "FullForm"


def test_circles_of_the_band_differential_close(band_differential):
    trajectory = ts.trace_differential(band_differential, 1 + 0j)
    assert trajectory.termination.kind == "ClosedPeriodic"
    assert trajectory.termination.period == pytest.approx(2 * math.pi, rel=1e-6)
    assert all(abs(abs(s.end) - 1.0) < 1e-6 for s in trajectory.segments)


def _random_psi(rng, k):
    divisor = [(complex(*rng.uniform(-1, 1, 2)), int(rng.choice([-2, -1, 1, 2, 3]))) for _ in range(3)]
    return RationalKDifferential(
        k=k, leading=complex(*rng.normal(size=2)),
        zeros=[{"z": z, "m": m} for z, m in divisor if m > 0],
        poles=[{"z": z, "m": -m} for z, m in divisor if m < 0],
    )


@pytest.mark.parametrize("k", [3, 5, 7])
def test_root_rotated_by_pi_over_k_retraces_the_same_curves(k):
    # (e^{i pi/k} y)^k = -R: the horizontal lines of -Psi are those of Psi for odd k
    rng = np.random.default_rng(settings.KDIFF_SEED + k)
    for _ in range(5):
        psi = _random_psi(rng, k)
        z0 = 2.5 * cmath.exp(2j * math.pi * rng.uniform())
        branch = int(rng.integers(k))
        budget = 0.1 * abs(ds.kth_root_branch(psi, z0, branch))
        forward = ts.trace_differential(psi, z0, branch=branch, budget=budget, samples=64)
        assert forward.termination.kind == "LengthBudgetExhausted"
        z1 = forward.segments[-1].end
        back = -(z1 - forward.segments[-1].start)
        flipped = ds.scale(psi, -1)
        turned = max(range(k), key=lambda j: dot(1 / ds.kth_root_branch(flipped, z1, j), back))
        backward = ts.trace_differential(flipped, z1, branch=turned, budget=budget, samples=64)
        ahead = [z0] + [s.end for s in forward.segments]
        behind = [z1] + [s.end for s in backward.segments]
        assert max(abs(a - b) for a, b in zip(ahead, reversed(behind))) < 1e-9


@pytest.mark.parametrize("case", range(3))
def test_dense_domains_of_the_irrational_quartic_torus_have_small_holonomy(case):
    surface = ingest_gluing(load_doc("irrational_quartic_torus_surface.json"))
    rng = np.random.default_rng(settings.KDIFF_SEED + case)
    y = rng.uniform(0.2, 0.8)
    z = complex(y * (math.sqrt(2) - 1) + rng.uniform(0.2, 0.8), y)
    # vertical field: translation by 1 + (sqrt 2 - 1 + i) is irrational along it
    trajectory = ts.trace(surface, SurfacePoint(polygon=0, z=z), branch=1)
    assert trajectory.termination.kind == "DenseDetected"
    assert ts.holonomy_group(surface, trajectory.termination.domain).order <= 2


def test_trajectory_crossing_a_free_edge_leaves_the_surface(torus_piece):
    trajectory = ts.trace(torus_piece, SurfacePoint(polygon=0, z=1 + 0.5j), dual=True)
    assert trajectory.termination.kind == "LeftSurface"
    assert trajectory.termination.label is None
    assert trajectory.length == pytest.approx(0.5 * math.sqrt(2))
