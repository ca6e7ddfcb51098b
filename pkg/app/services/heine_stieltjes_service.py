"""
Service for the Heine-Stieltjes problem Q S^(k) = (n)_k V S.

Given V, the coefficients of S follow from a downward recursion starting at
the monic top coefficient; the lowest deg V equations are left over and form
a small system in the coefficients of V. Exactly solvable problems have no
leftover equations. The recursion runs in complex floats, or in mpmath
at a chosen precision for large n where the monomial basis is badly
conditioned.
"""
import itertools
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import mpmath
import numpy as np
from numpy.polynomial import polynomial as P
from shapely.geometry import MultiPoint
from shapely.geometry import Point as ShapelyPoint

from app.core.config import settings
from app.core.exceptions import NumericBudgetError, SingularPointError
from app.models.hs import (
    CauchyPowerReport,
    ContinuationStep,
    HSPair,
    HSProblem,
    HSSolution,
    HSVerification,
    RootMeasure,
    falling_factorial,
)
from app.services import batch_service

logger = logging.getLogger(__name__)


def default_precision(n: int) -> int:
    """Decimal digits that keep the degree-n recursion and root evaluation accurate."""
    return 30 + n


# Polynomial helpers


def apply_operator(Q: Sequence[complex], S: Sequence[complex], k: int) -> np.ndarray:
    """T(S) = Q S^(k), coefficients low -> high."""
    S = np.asarray(S, dtype=complex)
    if len(S) <= k:
        return np.zeros(1, dtype=complex)
    return P.polymul(np.asarray(Q, dtype=complex), P.polyder(S, k))


def residual_polynomial(problem: HSProblem, V: Sequence[complex], S: Sequence[complex]) -> np.ndarray:
    """Q S^(k) - (n)_k V S."""
    left = apply_operator(problem.Q, S, problem.k)
    right = problem.pochhammer * P.polymul(np.asarray(V, dtype=complex), np.asarray(S, dtype=complex))
    size = max(len(left), len(right))
    return np.pad(left, (0, size - len(left))) - np.pad(right, (0, size - len(right)))


def _residual_scale(problem: HSProblem, V: Sequence[complex], S: Sequence[complex]) -> float:
    left = apply_operator(problem.Q, S, problem.k)
    right = problem.pochhammer * P.polymul(np.asarray(V, dtype=complex), np.asarray(S, dtype=complex))
    return float(max(1.0, np.max(np.abs(left)), np.max(np.abs(right))))


def q_roots(problem: HSProblem) -> np.ndarray:
    return P.polyroots(np.asarray(problem.Q, dtype=complex))


def hull_distance(problem: HSProblem, z: complex) -> float:
    """Distance from z to Conv(Q); zero inside."""
    hull = MultiPoint([(r.real, r.imag) for r in q_roots(problem)]).convex_hull
    return hull.distance(ShapelyPoint(z.real, z.imag))


def _stieltjes(q: Sequence, k: int, n: int, v: Sequence, zero) -> List:
    """S coefficients given monic V; the top deg S equations of the problem are satisfied."""
    d = len(v) - 1
    c = falling_factorial(n, k)
    ff = [falling_factorial(j, k) for j in range(n + 1)]
    s = [zero] * (n + 1)
    s[n] = zero + 1
    for m in range(n + d - 1, d - 1, -1):
        t = m - d
        total = zero
        for j in range(t + 1, min(n, m + k) + 1):
            total += s[j] * ff[j] * q[m + k - j]
        for i in range(d):
            if m - i <= n:
                total -= c * v[i] * s[m - i]
        s[t] = -total / (ff[t] - c)
    return s


def _leftover(q: Sequence, k: int, n: int, v: Sequence, s: Sequence, zero) -> List:
    """The lowest deg V coefficients of Q S^(k) - (n)_k V S."""
    d = len(v) - 1
    c = falling_factorial(n, k)
    out = []
    for m in range(d):
        total = zero
        for j in range(0, min(n, m + k) + 1):
            total += s[j] * falling_factorial(j, k) * q[m + k - j]
        for i in range(min(d, m) + 1):
            total -= c * v[i] * s[m - i]
        out.append(total)
    return out


def _check_nondegenerate(problem: HSProblem) -> None:
    n, k = problem.n, problem.k
    c = problem.pochhammer
    diagonal = [falling_factorial(j, k) for j in range(n)]
    if n < k or c in diagonal:
        raise ValueError(f"n = {n} < k = {k}: S^(k) vanishes and the problem does not determine S")


# Solvers


def hs_solve_exact(problem: HSProblem, dps: Optional[int] = None) -> HSPair:
    """
    Unique monic solution of Q S^(k) = (n)_k S for deg Q = k.

    Args:
        problem: exactly solvable problem
        dps: decimal precision of the recursion; complex floats when None

    Returns:
        HSPair with V = 1

    Raises:
        ValueError: deg Q != k, or n < k
    """
    if not problem.exactly_solvable:
        raise ValueError(f"deg Q = {problem.degree} but the exact solver needs deg Q = k = {problem.k}")
    if problem.n == 0:
        return HSPair(V=[1], S=[1], residual=0.0)
    _check_nondegenerate(problem)
    if dps is None:
        S = _stieltjes([complex(c) for c in problem.Q], problem.k, problem.n, [1], 0j)
    else:
        with mpmath.workdps(dps):
            coeffs = _stieltjes([mpmath.mpc(c) for c in problem.Q], problem.k, problem.n, [1], mpmath.mpc(0))
            S = [complex(c) for c in coeffs]
    residual = float(np.max(np.abs(residual_polynomial(problem, [1], S))))
    return HSPair(V=[1], S=S, residual=residual)


def exact_coefficients(problem: HSProblem, V: Sequence[complex], dps: int) -> List:
    """S coefficients as mpmath numbers, for a V that solves the leftover equations."""
    with mpmath.workdps(dps):
        return _stieltjes([mpmath.mpc(c) for c in problem.Q], problem.k, problem.n,
                          [mpmath.mpc(c) for c in V], mpmath.mpc(0))


def _gauss_lucas_v(problem: HSProblem) -> List[complex]:
    """Monic normalisation of Q^(k); its roots lie in Conv(Q)."""
    derivative = P.polyder(np.asarray(problem.Q, dtype=complex), problem.k)
    return list(derivative / derivative[-1])


def _float_system(problem: HSProblem) -> Callable[[np.ndarray], np.ndarray]:
    q = [complex(c) for c in problem.Q]
    k, n = problem.k, problem.n

    def system(x: np.ndarray) -> np.ndarray:
        v = list(x) + [1]
        s = _stieltjes(q, k, n, v, 0j)
        return np.array(_leftover(q, k, n, v, s, 0j), dtype=complex)

    return system


def _newton(system: Callable[[np.ndarray], np.ndarray], x0: np.ndarray) -> Optional[np.ndarray]:
    """Damped Newton with a forward-difference Jacobian; None on divergence."""
    x = np.array(x0, dtype=complex)
    fx = system(x)
    for _ in range(settings.NEWTON_MAX_ITER):
        h = 1e-7 * np.maximum(1.0, np.abs(x))
        jac = np.empty((len(x), len(x)), dtype=complex)
        for i in range(len(x)):
            shifted = x.copy()
            shifted[i] += h[i]
            jac[:, i] = (system(shifted) - fx) / h[i]
        try:
            step = np.linalg.solve(jac, fx)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        damping = 1.0
        norm = np.linalg.norm(fx)
        while True:
            candidate = x - damping * step
            fc = system(candidate)
            if np.all(np.isfinite(fc)) and (np.linalg.norm(fc) < norm or damping < 1e-4):
                break
            damping /= 2
        x, fx = candidate, fc
        if damping * np.linalg.norm(step) <= settings.NEWTON_TOL * (1.0 + np.linalg.norm(x)):
            return x
    logger.debug("Newton did not converge from a seed")
    return None


def _seeds(problem: HSProblem, restarts: int, seed: int) -> List[np.ndarray]:
    """V coefficients: divisors of Q first, then random convex combinations of its roots."""
    roots = q_roots(problem)
    d = problem.degree - problem.k
    seeds = [P.polyfromroots(list(sub))[:-1] for sub in itertools.combinations(roots, d)]
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        weights = rng.dirichlet(np.ones(len(roots)), size=d)
        seeds.append(P.polyfromroots(weights @ roots)[:-1])
    return seeds


def _dedupe(solutions: List[np.ndarray], scale: float) -> List[Tuple[np.ndarray, int]]:
    """Merge equal solutions; near-coincident ones raise the multiplicity."""
    merged: List[List] = []
    for x in sorted(solutions, key=lambda a: tuple(np.round(np.concatenate([a.real, a.imag]), 9))):
        for entry in merged:
            gap = np.max(np.abs(entry[0] - x)) if len(x) else 0.0
            if gap <= 1e-9 * scale:
                break
            if gap <= settings.DEDUPE_DISTANCE * scale:
                entry[1] += 1
                break
        else:
            merged.append([x, 1])
    return [(x, m) for x, m in merged]


def hs_solve_general(problem: HSProblem, restarts: Optional[int] = None, seed: Optional[int] = None,
                     workers: Optional[int] = None) -> HSSolution:
    """
    All Van Vleck / Stieltjes pairs reachable by multi-start Newton.

    The count is compared to binom(n + l - k, l - k); near-coincident
    solutions are merged and flagged, never split.

    Raises:
        ValueError: deg Q = k (use the exact solver), or 0 < n < k
    """
    if problem.exactly_solvable:
        raise ValueError("deg Q = k: use hs_solve_exact")
    target = problem.target_count
    if problem.n == 0:
        pair = HSPair(V=_gauss_lucas_v(problem), S=[1], residual=0.0)
        return HSSolution(problem=problem, pairs=[pair], target=target, found=1)
    _check_nondegenerate(problem)
    restarts = settings.NEWTON_RESTARTS if restarts is None else restarts
    seeds = _seeds(problem, restarts, settings.KDIFF_SEED if seed is None else seed)
    system = _float_system(problem)
    results = batch_service.run_batch(lambda x0: _newton(system, x0), seeds, workers)
    converged = []
    for x in results:
        if x is None:
            continue
        V = list(x) + [1]
        S = _stieltjes([complex(c) for c in problem.Q], problem.k, problem.n, V, 0j)
        residual = np.max(np.abs(residual_polynomial(problem, V, S)))
        if residual <= 1e-8 * _residual_scale(problem, V, S):
            converged.append(x)
    diverged = len(seeds) - len(converged)
    scale = max([1.0] + [float(np.max(np.abs(x))) for x in converged])
    pairs = []
    for x, multiplicity in _dedupe(converged, scale):
        V = list(x) + [1]
        S = _stieltjes([complex(c) for c in problem.Q], problem.k, problem.n, V, 0j)
        residual = float(np.max(np.abs(residual_polynomial(problem, V, S))))
        pairs.append(HSPair(V=V, S=S, residual=residual, multiplicity=multiplicity))
    suspected = len(pairs) < target or any(p.multiplicity > 1 for p in pairs)
    if len(pairs) < target:
        logger.warning(f"Found {len(pairs)} of {target} pairs for n={problem.n}; multiplicities suspected")
    else:
        logger.info(f"Found {len(pairs)} of {target} pairs for n={problem.n} from {len(seeds)} seeds")
    return HSSolution(problem=problem, pairs=pairs, target=target, found=len(pairs),
                      multiplicity_suspected=suspected, diverged=diverged)


def refine_pair(problem: HSProblem, V0: Sequence[complex], dps: Optional[int] = None) -> Tuple[List[complex], List]:
    """
    Newton in the coefficients of V at high precision, from V0.

    Returns:
        (V, S coefficients as mpmath numbers)

    Raises:
        NumericBudgetError: no convergence from V0
    """
    dps = dps or default_precision(problem.n)
    d = problem.degree - problem.k
    if d == 0:
        return [1], exact_coefficients(problem, [1], dps)
    _check_nondegenerate(problem)
    with mpmath.workdps(dps):
        q = [mpmath.mpc(c) for c in problem.Q]
        zero = mpmath.mpc(0)

        def system(*x):
            v = list(x) + [mpmath.mpc(1)]
            s = _stieltjes(q, problem.k, problem.n, v, zero)
            out = _leftover(q, problem.k, problem.n, v, s, zero)
            return out[0] if d == 1 else out

        start = [mpmath.mpc(c) for c in V0[:d]]
        try:
            root = mpmath.findroot(system, start[0] if d == 1 else start, verify=False)
        except (ValueError, ZeroDivisionError) as e:
            raise NumericBudgetError(f"Newton in V did not converge for n={problem.n}: {e}")
        x = [root] if d == 1 else list(root)
        V = [complex(c) for c in x] + [1]
        if not all(math.isfinite(abs(c)) for c in V):
            raise NumericBudgetError(f"Newton in V diverged for n={problem.n}")
        s = _stieltjes(q, problem.k, problem.n, list(x) + [mpmath.mpc(1)], zero)
    return V, s


# Root measures and Cauchy transforms


def _aberth(evaluate: Callable[[complex], complex], degree: int, center: complex, radius: float,
            max_sweeps: int = 500) -> np.ndarray:
    """Simultaneous Aberth iteration; evaluate returns p(x)/p'(x)."""
    angles = 2 * np.pi * (np.arange(degree) + 0.25) / degree
    x = center + radius * np.exp(1j * angles)
    for sweep in range(max_sweeps):
        ratio = np.array([evaluate(z) for z in x], dtype=complex)
        diff = x[:, None] - x[None, :]
        np.fill_diagonal(diff, 1)
        repulsion = (1 / diff).sum(axis=1) - 1
        step = ratio / (1 - ratio * repulsion)
        x = x - step
        if np.max(np.abs(step)) <= 1e-14 * max(1.0, radius):
            logger.debug(f"Aberth converged after {sweep + 1} sweeps for degree {degree}")
            return x
    raise NumericBudgetError(f"root finding did not converge in {max_sweeps} sweeps for degree {degree}")


def _sorted(atoms: np.ndarray) -> List[complex]:
    return sorted((complex(a) for a in atoms), key=lambda a: (round(a.real, 12), round(a.imag, 12)))


def root_measure(S: Sequence, dps: Optional[int] = None, center: Optional[complex] = None,
                 radius: Optional[float] = None) -> RootMeasure:
    """
    Root-counting measure of S.

    Float coefficients use companion eigenvalues with one Newton polish;
    mpmath coefficients (with dps) use Aberth sweeps evaluated at that
    precision.

    Raises:
        ValueError: S constant
        NumericBudgetError: degree above the cap, or no convergence
    """
    degree = len(S) - 1
    if degree < 1:
        raise ValueError("S must be nonconstant")
    if degree > settings.ROOT_DEGREE_CAP:
        raise NumericBudgetError(f"degree {degree} exceeds the root-finding cap {settings.ROOT_DEGREE_CAP}")
    if dps is None:
        coeffs = np.asarray([complex(c) for c in S])
        atoms = P.polyroots(coeffs)
        derivative = P.polyder(coeffs)
        values, slopes = P.polyval(atoms, coeffs), P.polyval(atoms, derivative)
        safe = np.abs(slopes) > 1e-300
        atoms[safe] = atoms[safe] - values[safe] / slopes[safe]
        return RootMeasure(atoms=_sorted(atoms))
    with mpmath.workdps(dps):
        high = [mpmath.mpc(c) for c in reversed(list(S))]

        def evaluate(z: complex) -> complex:
            value, slope = mpmath.polyval(high, mpmath.mpc(z), derivative=True)
            return complex(value / slope) if slope != 0 else 0j

        if center is None or radius is None:
            center = 0j
            radius = 1.0 + float(max(abs(c / high[0]) for c in high[1:]))
        atoms = _aberth(evaluate, degree, center, radius)
    return RootMeasure(atoms=_sorted(atoms))


def problem_measure(problem: HSProblem, V: Sequence[complex] = (1,), dps: Optional[int] = None,
                    coefficients: Optional[Sequence] = None) -> RootMeasure:
    """Root measure of the Stieltjes polynomial for a solved V, at high precision."""
    dps = dps or default_precision(problem.n)
    coeffs = coefficients if coefficients is not None else exact_coefficients(problem, V, dps)
    roots = q_roots(problem)
    center = complex(np.mean(roots))
    radius = 1.1 * float(np.max(np.abs(roots - center))) + 1e-3
    return root_measure(coeffs, dps=dps, center=center, radius=radius)


def cauchy_at(measure: RootMeasure, z: complex) -> complex:
    """
    Cauchy transform of a root measure.

    Raises:
        SingularPointError: z within 1e-12 of an atom
    """
    atoms = np.asarray(measure.atoms, dtype=complex)
    gaps = z - atoms
    if np.min(np.abs(gaps)) <= 1e-12:
        raise SingularPointError(f"z = {z} lies on an atom of the measure")
    return complex(np.sum(1 / gaps) / len(atoms))


def cauchy_of_polynomial(S: Sequence[complex], z: complex) -> complex:
    """S'(z) / (n S(z))."""
    coeffs = np.asarray(S, dtype=complex)
    value = P.polyval(z, coeffs)
    if abs(value) == 0:
        raise SingularPointError(f"z = {z} is a root of S")
    return complex(P.polyval(z, P.polyder(coeffs)) / ((len(coeffs) - 1) * value))


def sample_points(problem: HSProblem, count: int = 20, distance: float = 1.0) -> List[complex]:
    """Points on a circle around Conv(Q), each at least `distance` from the hull."""
    roots = q_roots(problem)
    center = complex(np.mean(roots))
    radius = float(np.max(np.abs(roots - center))) + distance
    return [center + radius * complex(math.cos(t), math.sin(t))
            for t in 2 * math.pi * (np.arange(count) + 0.5) / count]


def check_cauchy_power(problem: HSProblem, V: Sequence[complex], points: Sequence[complex],
                       measure: RootMeasure, min_distance: float = 1.0,
                       workers: Optional[int] = None) -> CauchyPowerReport:
    """
    Relative error of C^k against V/Q at points away from Conv(Q).

    Raises:
        ValueError: a point is closer than min_distance to the hull
    """
    for z in points:
        if hull_distance(problem, z) < min_distance * (1 - 1e-9):
            raise ValueError(f"sample point {z} is within {min_distance} of Conv(Q)")

    def error(z: complex) -> float:
        target = P.polyval(z, np.asarray(V, dtype=complex)) / P.polyval(z, np.asarray(problem.Q, dtype=complex))
        return float(abs(cauchy_at(measure, z) ** problem.k - target) / abs(target))

    errors = batch_service.run_batch(error, list(points), workers)
    return CauchyPowerReport(
        n=problem.n, points=list(points), errors=errors,
        max_error=float(np.max(errors)), median_error=float(np.median(errors)),
    )


def continuation(problem: HSProblem, ns: Sequence[int], start: Optional[Sequence[complex]] = None,
                 points: Optional[Sequence[complex]] = None) -> List[ContinuationStep]:
    """
    Follow one Van Vleck branch through increasing n.

    The branch starts at `start` (V coefficients) or at the first solution
    of a small-n solve in sorted order; every further V is the Newton limit
    from its predecessor, so the chain keeps the nearest coefficients.
    """
    ns = sorted(ns)
    if len(ns) < 1:
        raise ValueError("continuation needs at least one n")
    points = points or sample_points(problem)
    if start is None:
        if problem.exactly_solvable:
            start = [1]
        else:
            seed_n = max(problem.k, min(ns[0], 8))
            solution = hs_solve_general(problem.model_copy(update={"n": seed_n}))
            start = solution.pairs[0].V
    V = list(start)
    chain = []
    for n in ns:
        step_problem = problem.model_copy(update={"n": n})
        V, coefficients = refine_pair(step_problem, V)
        measure = problem_measure(step_problem, V, coefficients=coefficients)
        report = check_cauchy_power(step_problem, V, points, measure)
        chain.append(ContinuationStep(n=n, V=V, max_error=report.max_error))
        logger.info(f"Continuation n={n}: max relative error {report.max_error:.3e}")
    return chain


def hs_verify(problem: HSProblem, pair: HSPair, tol: Optional[float] = None) -> HSVerification:
    """
    Residual polynomial and Conv(Q) localisation of the roots of V and S.

    Raises:
        ValueError: degrees do not match the problem
    """
    tol = tol or 1e-10
    d = problem.degree - problem.k
    if len(pair.V) != d + 1 or len(pair.S) != problem.n + 1:
        raise ValueError(
            f"degrees ({len(pair.V) - 1}, {len(pair.S) - 1}) do not match (deg V, deg S) = ({d}, {problem.n})"
        )
    residual = residual_polynomial(problem, pair.V, pair.S)
    scale = _residual_scale(problem, pair.V, pair.S)
    roots = q_roots(problem)
    diameter = max([1.0] + [abs(a - b) for a in roots for b in roots])
    inflation = settings.HULL_INFLATION * diameter

    def inside(coeffs: Sequence[complex]) -> bool:
        if len(coeffs) < 2:
            return True
        return all(hull_distance(problem, complex(a)) <= inflation for a in root_measure(coeffs).atoms)

    return HSVerification(
        residual_coefficients=[complex(c) for c in residual], residual=float(np.max(np.abs(residual))),
        scale=scale, v_in_hull=inside(pair.V), s_in_hull=inside(pair.S), tol=tol,
    )
