"""
Commands for decompositions, quasi-Strebel structures and packs.
"""
import argparse
import logging
from pathlib import Path

from app.cli.common import add_output, emit, load_source, load_surface
from app.models.differential import RationalKDifferential
from app.models.render import RenderSpec
from app.models.structure import LevelFunction
from app.services import document_service, render_service, strebel_service
from app.services.decompose_service import cut_cylinders, decompose
from app.services.flat_builder_service import build_flat_model

logger = logging.getLogger(__name__)


def _surface(path):
    source = load_source(path)
    return build_flat_model(source) if isinstance(source, RationalKDifferential) else source


def decompose_command(args: argparse.Namespace) -> int:
    """Infinite cylinders, cut and tiles of a surface."""
    surface = _surface(args.source)
    reduced, infinite = cut_cylinders(surface)
    decomposition = decompose(reduced, budget=args.budget)
    emit(decomposition.model_copy(update={"cylinders": infinite + decomposition.cylinders}), args.out)
    return 0


def strebel(args: argparse.Namespace) -> int:
    """Full construction with validation report and packs."""
    source = load_source(args.source)
    report = strebel_service.strebel_report(source, budget=args.budget, samples=args.samples)
    emit(report, args.out)
    if args.svg:
        surface = build_flat_model(source) if isinstance(source, RationalKDifferential) else source
        scene = render_service.scene_from_structure(report.structure, surface)
        svg = render_service.emit_svg(scene, RenderSpec(potential=False, atoms=False))
        document_service.write_text(args.svg, svg)
        logger.info(f"Wrote {args.svg}")
    return 0


def _structure(path) -> LevelFunction:
    doc = document_service.read_json(path)
    return LevelFunction.model_validate(doc["structure"] if "structure" in doc else doc)


def packs(args: argparse.Namespace) -> int:
    structure = _structure(args.structure)
    surface = load_surface(args.surface)
    emit({"packs": strebel_service.extract_packs(structure, surface)}, args.out)
    return 0


def validate(args: argparse.Namespace) -> int:
    structure = _structure(args.structure)
    surface = load_surface(args.surface)
    report = strebel_service.validate_structure(structure, surface, samples=args.samples)
    emit(report, args.out)
    return 0 if report.passed else 1


def compare(args: argparse.Namespace) -> int:
    surface = load_surface(args.surface)
    verdict = strebel_service.compare_coarseness(
        _structure(args.first), _structure(args.second), surface, samples=args.samples,
    )
    emit(verdict, args.out)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("decompose", help="cut a surface and tile its components")
    parser.add_argument("source", help="surface or differential document")
    parser.add_argument("--budget", type=float, default=None, help="length budget for critical rays")
    add_output(parser)
    parser.set_defaults(handler=decompose_command)

    parser = subparsers.add_parser("strebel", help="construct and validate a quasi-Strebel structure")
    parser.add_argument("source", help="surface or differential document")
    parser.add_argument("--budget", type=float, default=None, help="length budget for critical rays")
    parser.add_argument("--samples", type=int, default=None, help="level curves sampled by the closure check")
    parser.add_argument("--svg", type=Path, default=None, help="also draw the structure here")
    add_output(parser)
    parser.set_defaults(handler=strebel)

    parser = subparsers.add_parser("validate", help="check a level function clause by clause")
    parser.add_argument("structure", help="level function or strebel report document")
    parser.add_argument("surface", help="surface document")
    parser.add_argument("--samples", type=int, default=None)
    add_output(parser)
    parser.set_defaults(handler=validate)

    parser = subparsers.add_parser("packs", help="packs of a level function")
    parser.add_argument("structure", help="level function or strebel report document")
    parser.add_argument("surface", help="surface document")
    add_output(parser)
    parser.set_defaults(handler=packs)

    parser = subparsers.add_parser("compare", help="coarseness order of two level functions")
    parser.add_argument("first", help="level function document")
    parser.add_argument("second", help="level function document")
    parser.add_argument("surface", help="surface document")
    parser.add_argument("--samples", type=int, default=400)
    add_output(parser)
    parser.set_defaults(handler=compare)
