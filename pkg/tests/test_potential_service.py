import math

import numpy as np
import pytest
from numpy.polynomial import polynomial as P

from app.core.config import settings
from app.models.hs import HSProblem, RootMeasure
from app.services import heine_stieltjes_service as hs
from app.services import potential_service as ps


@pytest.fixture
def cubic_measure():
    return RootMeasure(atoms=[-1, 0, 1])


def test_boundary_radius_is_where_the_log_bound_meets_the_tolerance(cubic_measure):
    radius = ps.boundary_radius(cubic_measure)
    assert -math.log(1 - 1 / radius) == pytest.approx(0.02 * math.log(radius), rel=1e-6)


def test_default_window_reaches_the_boundary_radius(cubic_measure):
    radius = ps.boundary_radius(cubic_measure)
    xmin, xmax, ymin, ymax = ps.default_window(cubic_measure)
    assert xmin <= -radius and ymin <= -radius
    assert xmax >= radius and ymax >= radius


def test_single_atom_at_the_origin_needs_no_room():
    assert ps.boundary_radius(RootMeasure(atoms=[0j])) == 0.0
    assert ps.default_window(RootMeasure(atoms=[0j])) == pytest.approx((-0.5, 0.5, -0.5, 0.5))


def test_coarse_grid_is_rejected(cubic_measure):
    with pytest.raises(ValueError):
        ps.potential_grid(cubic_measure, resolution=32)


def test_empty_window_is_rejected(cubic_measure):
    with pytest.raises(ValueError):
        ps.potential_grid(cubic_measure, window=(1.0, 1.0, -1.0, 1.0), resolution=64)


def test_grid_cells_are_square(cubic_measure):
    grid = ps.potential_grid(cubic_measure, resolution=64)
    dx, dy = grid.spacing
    assert dx == pytest.approx(dy)
    assert grid.width == 64
    assert len(grid.values) == grid.height
    assert not grid.jittered
    # u(z) = mean of log|z - a|
    z = grid.node(0, 0)
    expected = np.mean([np.log(abs(z - a)) for a in (-1, 0, 1)])
    assert grid.values[0][0] == pytest.approx(expected)


def test_atom_on_a_node_shifts_the_grid():
    grid = ps.potential_grid(RootMeasure(atoms=[0j]), window=(-1.0, 1.0, -1.0, 1.0), resolution=65)
    assert grid.jittered
    assert np.all(np.isfinite(grid.values))


def test_levy_density_is_a_probability_measure(cubic_measure):
    grid = ps.potential_grid(cubic_measure, resolution=128)
    report = ps.levy_positivity(grid, cubic_measure)
    assert report.total_mass == pytest.approx(1.0, abs=0.05)
    assert report.min_density > -1e-2
    assert report.exclusion_radius == pytest.approx(3 * grid.spacing[0])
    assert report.boundary_deviation <= 0.02


def test_small_window_fails_the_boundary_check(cubic_measure):
    grid = ps.potential_grid(cubic_measure, window=(-2.0, 2.0, -2.0, 2.0), resolution=64)
    report = ps.levy_positivity(grid, cubic_measure)
    # at z = 2 the potential is log(6) / 3
    assert report.boundary_deviation > 0.02
    assert not report.passed


@pytest.mark.slow
@pytest.mark.parametrize("case", range(10))
def test_random_exactly_solvable_measures_pass_the_levy_check(case):
    rng = np.random.default_rng(settings.KDIFF_SEED + case)
    k = int(rng.integers(2, 5))
    roots = rng.uniform(-1, 1, k) + 1j * rng.uniform(-1, 1, k)
    problem = HSProblem(k=k, n=100, Q=[complex(c) for c in P.polyfromroots(roots)])
    measure = hs.problem_measure(problem)
    grid = ps.potential_grid(measure, resolution=128)
    report = ps.levy_positivity(grid, measure)
    assert report.min_density >= -1e-3
    assert report.total_mass == pytest.approx(1.0, abs=0.02)
    assert report.boundary_deviation <= 0.02
    assert report.passed


def test_switching_tree_needs_two_measures(cubic_measure):
    with pytest.raises(ValueError):
        ps.switching_tree([cubic_measure], [0, -1, 0, 1], [1], 3)


def test_switching_tree_of_the_cubic_problem(cubic_problem):
    measures = [hs.problem_measure(cubic_problem.model_copy(update={"n": n})) for n in (12, 24)]
    tree = ps.switching_tree(measures, cubic_problem.Q, [1], 3, threshold=0.5)
    assert tree.is_forest
    assert tree.nodes
    assert all(edge.direction_error >= 0 for edge in tree.edges)


@pytest.mark.slow
def test_switching_tree_of_the_sextic_example(sextic_problem):
    measures = [hs.problem_measure(sextic_problem.model_copy(update={"n": n})) for n in (75, 150)]
    tree = ps.switching_tree(measures, sextic_problem.Q, [1], sextic_problem.k)
    assert tree.is_forest
    assert len(tree.leaves) == 6
    leaves = np.asarray(tree.leaves)
    for root in P.polyroots(np.asarray(sextic_problem.Q, dtype=complex)):
        assert np.min(np.abs(leaves - root)) < 1e-2


def test_roots_of_q_are_leaves_of_the_cubic_tree(cubic_problem):
    measures = [hs.problem_measure(cubic_problem.model_copy(update={"n": n})) for n in (12, 24)]
    tree = ps.switching_tree(measures, cubic_problem.Q, [1], 3, threshold=0.5)
    leaves = np.asarray(tree.leaves)
    for root in (-1, 0, 1):
        assert np.min(np.abs(leaves - root)) < 1e-9


def test_raster_round_trip(cubic_measure, tmp_path):
    grid = ps.potential_grid(cubic_measure, resolution=64)
    path = ps.write_raster(grid, tmp_path / "u.raster")
    again = ps.read_raster(path)
    assert (again.width, again.height) == (grid.width, grid.height)
    assert again.window == pytest.approx(grid.window)
    assert np.array_equal(np.asarray(again.values), np.asarray(grid.values))
