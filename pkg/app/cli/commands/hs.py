"""
Commands for the Heine-Stieltjes problem: hs solve|verify|measure|potential|tree.
"""
import argparse
import logging
from pathlib import Path

from app.cli.common import add_output, emit, window
from app.models.hs import HSPair, HSProblem, RootMeasure
from app.services import document_service
from app.services import heine_stieltjes_service as hs
from app.services import potential_service

logger = logging.getLogger(__name__)


def _problem(path, n=None) -> HSProblem:
    problem = HSProblem.model_validate(document_service.read_json(path))
    return problem if n is None else problem.model_copy(update={"n": n})


def _pair(path) -> HSPair:
    doc = document_service.read_json(path)
    if "pairs" in doc:
        doc = doc["pairs"][0]
    return HSPair.model_validate(doc)


def solve(args: argparse.Namespace) -> int:
    problem = _problem(args.problem, args.n)
    if problem.exactly_solvable:
        pair = hs.hs_solve_exact(problem, dps=args.dps)
        emit({"problem": problem, "pairs": [pair], "target": 1, "found": 1}, args.out)
    else:
        emit(hs.hs_solve_general(problem, restarts=args.restarts), args.out)
    return 0


def verify(args: argparse.Namespace) -> int:
    problem = _problem(args.problem, args.n)
    report = hs.hs_verify(problem, _pair(args.pair), args.tol)
    emit({"verification": report, "passed": report.passed}, args.out)
    return 0 if report.passed else 1


def _measure(problem: HSProblem, pair_path) -> RootMeasure:
    """Small exact problems in floats, everything else through the high-precision recursion."""
    if problem.exactly_solvable and problem.n <= 30:
        return hs.root_measure(hs.hs_solve_exact(problem).S)
    if pair_path:
        V = _pair(pair_path).V
    elif problem.exactly_solvable:
        V = [1]
    else:
        small = problem.model_copy(update={"n": max(problem.k, min(problem.n, 8))})
        V = hs.hs_solve_general(small).pairs[0].V
    V, coefficients = hs.refine_pair(problem, V)
    return hs.problem_measure(problem, V, coefficients=coefficients)


def measure(args: argparse.Namespace) -> int:
    problem = _problem(args.problem, args.n)
    result = _measure(problem, args.pair)
    doc = {"atoms": result.atoms, "n": problem.n, "mass": result.mass}
    if args.cauchy:
        V = _pair(args.pair).V if args.pair else [1]
        points = hs.sample_points(problem, distance=args.distance)
        doc["cauchy_power"] = hs.check_cauchy_power(problem, V, points, result, args.distance)
    emit(doc, args.out)
    return 0


def potential(args: argparse.Namespace) -> int:
    doc = document_service.read_json(args.measure)
    result = RootMeasure.model_validate(doc)
    grid = potential_service.potential_grid(result, window(args.window), args.resolution)
    report = potential_service.levy_positivity(grid, result, args.exclusion)
    if args.raster:
        potential_service.write_raster(grid, args.raster)
        logger.info(f"Wrote raster {args.raster}")
    emit({"grid": grid, "positivity": report}, args.out)
    return 0


def tree(args: argparse.Namespace) -> int:
    base = _problem(args.problem)
    measures = [_measure(base.model_copy(update={"n": n}), args.pair) for n in sorted(args.ns)]
    V = _pair(args.pair).V if args.pair else [1]
    skeleton = potential_service.switching_tree(measures, base.Q, V, base.k, args.threshold)
    emit({"atoms": measures[-1].atoms, "tree": skeleton}, args.out)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("hs", help="Heine-Stieltjes problems")
    commands = parser.add_subparsers(dest="hs_command", required=True)

    sub = commands.add_parser("solve", help="Van Vleck / Stieltjes pairs")
    sub.add_argument("problem", help='problem document {"k", "n", "Q"}')
    sub.add_argument("--n", type=int, default=None, help="override the degree of S")
    sub.add_argument("--restarts", type=int, default=None, help="random Newton restarts")
    sub.add_argument("--dps", type=int, default=None, help="decimal precision of the exact recursion")
    add_output(sub)
    sub.set_defaults(handler=solve)

    sub = commands.add_parser("verify", help="residual and hull check of a pair")
    sub.add_argument("problem")
    sub.add_argument("pair", help="pair document or solve output")
    sub.add_argument("--n", type=int, default=None)
    sub.add_argument("--tol", type=float, default=None, help="relative residual tolerance")
    add_output(sub)
    sub.set_defaults(handler=verify)

    sub = commands.add_parser("measure", help="root-counting measure of S")
    sub.add_argument("problem")
    sub.add_argument("--pair", default=None, help="pair document fixing V")
    sub.add_argument("--n", type=int, default=None)
    sub.add_argument("--cauchy", action="store_true", help="also compare C^k with V/Q away from Conv(Q)")
    sub.add_argument("--distance", type=float, default=1.0, help="distance of the sample points from Conv(Q)")
    add_output(sub)
    sub.set_defaults(handler=measure)

    sub = commands.add_parser("potential", help="logarithmic potential and Levy positivity")
    sub.add_argument("measure", help="measure document")
    sub.add_argument("--window", nargs=4, type=float, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    sub.add_argument("--resolution", type=int, default=None)
    sub.add_argument("--exclusion", type=float, default=3.0, help="exclusion radius around atoms, in cells")
    sub.add_argument("--raster", type=Path, default=None, help="binary raster output")
    add_output(sub)
    sub.set_defaults(handler=potential)

    sub = commands.add_parser("tree", help="support skeleton of root measures")
    sub.add_argument("problem")
    sub.add_argument("--ns", type=int, nargs="+", required=True, help="at least two degrees of S")
    sub.add_argument("--pair", default=None, help="pair document fixing V")
    sub.add_argument("--threshold", type=float, default=0.05, help="linkage cutoff relative to the diameter")
    add_output(sub)
    sub.set_defaults(handler=tree)
