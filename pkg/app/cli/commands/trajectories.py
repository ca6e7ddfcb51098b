"""
Commands for trajectories and holonomy.
"""
import argparse
import logging

from app.cli.common import add_output, emit, load_source
from app.models.differential import RationalKDifferential
from app.models.trajectory import LoopLeg, TrajectorySeed
from app.services import differential_service as ds
from app.services import document_service
from app.services import trajectory_service as ts

logger = logging.getLogger(__name__)


def trace(args: argparse.Namespace) -> int:
    """Trace a batch of seeds on a surface, or in the z-plane of a differential."""
    source = load_source(args.source)
    doc = document_service.read_json(args.seeds) if args.seeds else {}
    seeds = [TrajectorySeed.model_validate(s) for s in doc.get("seeds", [])]
    if args.critical:
        if isinstance(source, RationalKDifferential):
            raise ValueError("critical rays need a surface document")
        trajectories = ts.critical_graph(source, args.budget, dual=args.dual)
    elif isinstance(source, RationalKDifferential):
        trajectories = [
            ts.trace_differential(source, complex(s.z), s.branch, args.budget or 10.0, dual=s.dual or args.dual)
            for s in seeds
        ]
    else:
        if args.dual:
            seeds = [s.model_copy(update={"dual": True}) for s in seeds]
        trajectories = ts.trace_batch(source, seeds, args.budget)
    emit({"trajectories": trajectories, "summary": ts.termination_summary(trajectories)}, args.out)
    return 0


def holonomy(args: argparse.Namespace) -> int:
    """Holonomy of loops and the holonomy group."""
    source = load_source(args.source)
    loops = document_service.read_json(args.loops).get("loops", []) if args.loops else []
    if isinstance(source, RationalKDifferential):
        elements = [{"k": source.k, "index": ds.holonomy_of_z_loop(source, [complex(*p) for p in loop])}
                    for loop in loops]
        emit({"loops": elements, "reduction": ts.power_reduction(source)}, args.out)
        return 0
    elements = [ts.holonomy_of_loop(source, [LoopLeg.model_validate(leg) for leg in loop]) for loop in loops]
    emit({
        "loops": elements,
        "group": ts.holonomy_group(source),
        "reduction": ts.power_reduction(source),
    }, args.out)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("trace", help="trace horizontal trajectories from seeds")
    parser.add_argument("source", help="surface or differential document")
    parser.add_argument("seeds", nargs="?", default=None, help='seed document {"seeds": [{"polygon", "z", "branch", "dual"}]}')
    parser.add_argument("--budget", type=float, default=None, help="canonical length budget")
    parser.add_argument("--dual", action="store_true", help="trace the horizontal field of i*Psi")
    parser.add_argument("--critical", action="store_true", help="trace the critical rays instead of the seeds")
    add_output(parser)
    parser.set_defaults(handler=trace)

    parser = subparsers.add_parser("holonomy", help="holonomy of loops and the holonomy group")
    parser.add_argument("source", help="surface or differential document")
    parser.add_argument("loops", nargs="?", default=None, help='loop document {"loops": [...]}')
    add_output(parser)
    parser.set_defaults(handler=holonomy)
