import numpy as np
import pytest
from numpy.polynomial import polynomial as P

from app.core.config import settings
from app.core.exceptions import SingularPointError
from app.models.hs import HSPair, HSProblem, falling_factorial
from app.services import heine_stieltjes_service as hs


def test_falling_factorial_and_pair_count(quartic_q_problem):
    assert falling_factorial(5, 3) == 60
    assert falling_factorial(2, 3) == 0
    assert quartic_q_problem.target_count == quartic_q_problem.n + 1


def test_problem_rejects_non_monic_q():
    with pytest.raises(ValueError):
        HSProblem(k=3, n=3, Q=[0, 0, 0, 2])


def test_operator_on_a_cubic():
    out = hs.apply_operator([0, -1, 0, 1], [0, -1, 0, 1], 3)
    assert list(out) == pytest.approx([0, -6, 0, 6])


def test_exact_solution_of_the_cubic_is_q_itself(cubic_problem):
    pair = hs.hs_solve_exact(cubic_problem)
    assert [complex(c) for c in pair.S] == pytest.approx([0, -1, 0, 1])
    assert pair.residual == pytest.approx(0.0, abs=1e-12)
    assert hs.hs_verify(cubic_problem, pair).passed


def test_exact_solution_at_high_precision_matches():
    problem = HSProblem(k=3, n=3, Q=[0, 0, 0, 1])
    pair = hs.hs_solve_exact(problem, dps=40)
    assert [complex(c) for c in pair.S] == pytest.approx([0, 0, 0, 1])


def test_degree_below_k_is_degenerate():
    with pytest.raises(ValueError):
        hs.hs_solve_exact(HSProblem(k=3, n=2, Q=[0, -1, 0, 1]))


def test_general_solver_refuses_exact_problems(cubic_problem):
    with pytest.raises(ValueError):
        hs.hs_solve_general(cubic_problem)


def test_n_zero_gives_the_derivative_of_q(quartic_q_problem):
    solution = hs.hs_solve_general(quartic_q_problem.model_copy(update={"n": 0}))
    assert solution.found == 1
    pair = solution.pairs[0]
    assert [complex(c) for c in pair.S] == [1]
    assert complex(pair.V[-1]) == pytest.approx(1)


def test_general_solutions_verify(quartic_q_problem):
    solution = hs.hs_solve_general(quartic_q_problem)
    assert solution.pairs
    for pair in solution.pairs:
        assert len(pair.V) == 2
        assert hs.hs_verify(quartic_q_problem, pair, tol=1e-8).passed


@pytest.mark.slow
@pytest.mark.parametrize("n", [3, 4, 5])
def test_general_solver_finds_every_pair(quartic_q_problem, n):
    problem = quartic_q_problem.model_copy(update={"n": n})
    solution = hs.hs_solve_general(problem)
    assert solution.found == n + 1
    assert not solution.multiplicity_suspected


def test_verify_rejects_wrong_degrees(cubic_problem):
    with pytest.raises(ValueError):
        hs.hs_verify(cubic_problem, HSPair(V=[1], S=[0, 1, 1]))


def test_root_measure_and_cauchy_transform():
    measure = hs.root_measure([0, -1, 0, 1])
    assert [complex(a) for a in measure.atoms] == pytest.approx([-1, 0, 1], abs=1e-12)
    assert measure.mass == pytest.approx(1.0)
    assert hs.cauchy_at(measure, 2 + 0j) == pytest.approx(11 / 18)
    assert hs.cauchy_of_polynomial([0, -1, 0, 1], 2 + 0j) == pytest.approx(11 / 18)
    with pytest.raises(SingularPointError):
        hs.cauchy_at(measure, 0j)


def test_high_precision_roots_agree(cubic_problem):
    measure = hs.problem_measure(cubic_problem)
    assert [complex(a) for a in measure.atoms] == pytest.approx([-1, 0, 1], abs=1e-12)


def test_constant_polynomial_has_no_measure():
    with pytest.raises(ValueError):
        hs.root_measure([1])


def test_sample_points_stay_away_from_the_hull(cubic_problem):
    points = hs.sample_points(cubic_problem, count=8)
    assert len(points) == 8
    assert all(hs.hull_distance(cubic_problem, z) >= 1 - 1e-9 for z in points)
    measure = hs.root_measure([0, -1, 0, 1])
    with pytest.raises(ValueError):
        hs.check_cauchy_power(cubic_problem, [1], [1.5 + 0j], measure)


def test_cauchy_power_error_shrinks_along_the_continuation(cubic_problem):
    chain = hs.continuation(cubic_problem, [3, 12, 24])
    assert [step.n for step in chain] == [3, 12, 24]
    assert chain[-1].max_error < chain[0].max_error


@pytest.mark.slow
def test_continuation_of_a_general_branch(quartic_q_problem):
    chain = hs.continuation(quartic_q_problem, [6, 12, 18])
    assert len(chain) == 3
    assert all(len(step.V) == 2 for step in chain)
    assert chain[-1].max_error < chain[0].max_error


def _dense_solution(Q, k, n) -> np.ndarray:
    """Monic S from the coefficients of Q S^(k) - (n)_k S below z^n, one column per monomial."""
    c = falling_factorial(n, k)

    def image(j):
        monomial = np.zeros(j + 1, dtype=complex)
        monomial[j] = 1
        out = np.zeros(n + 1, dtype=complex)
        product = P.polymul(Q, P.polyder(monomial, k)) if j >= k else np.zeros(1)
        out[:min(len(product), n + 1)] += product[:n + 1]
        out[j] -= c
        return out[:n]

    matrix = np.column_stack([image(j) for j in range(n)])
    lower = np.linalg.solve(matrix, -image(n))
    return np.append(lower, 1)


@pytest.mark.parametrize("n", range(2, 11))
def test_exact_solver_matches_a_dense_linear_solve(n):
    problem = HSProblem(k=2, n=n, Q=[-1, 0, 1])
    pair = hs.hs_solve_exact(problem)
    assert [complex(c) for c in pair.S] == pytest.approx(list(_dense_solution([-1, 0, 1], 2, n)), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("n", range(2, 11))
def test_exact_solver_matches_a_dense_linear_solve_for_random_q(n):
    rng = np.random.default_rng(settings.KDIFF_SEED + n)
    Q = [complex(*rng.normal(size=2)), complex(*rng.normal(size=2)), 1]
    pair = hs.hs_solve_exact(HSProblem(k=2, n=n, Q=Q))
    assert [complex(c) for c in pair.S] == pytest.approx(list(_dense_solution(Q, 2, n)), rel=1e-10, abs=1e-10)


def test_third_stieltjes_polynomial_of_z2_minus_1_is_exact():
    pair = hs.hs_solve_exact(HSProblem(k=2, n=3, Q=[-1, 0, 1]))
    assert [complex(c) for c in pair.S] == [0, -1, 0, 1]


@pytest.mark.slow
def test_cauchy_power_error_falls_below_ten_percent(quartic_q_problem):
    chain = hs.continuation(quartic_q_problem, [40, 80, 120])
    errors = [step.max_error for step in chain]
    assert errors[0] > errors[1] > errors[2]
    assert errors[-1] < 0.1
