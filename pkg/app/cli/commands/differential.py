"""
Commands for differentials and flat models.
"""
import argparse
import logging

from app.cli.common import add_output, emit, load_source, window
from app.core.exceptions import SchemaError
from app.models.differential import RationalKDifferential
from app.services import differential_service as ds
from app.services.flat_builder_service import build_flat_model
from app.services.flat_model_service import emit_surface, get_atlas

logger = logging.getLogger(__name__)


def analyze(args: argparse.Namespace) -> int:
    """Singularity table and admissibility of a differential."""
    psi = load_source(args.document)
    if not isinstance(psi, RationalKDifferential):
        raise SchemaError("analyze expects a differential document")
    singularities = ds.analyze_singularities(psi)
    report = ds.is_admissible(psi)
    forms = []
    for s in singularities:
        forms.append(ds.classify_normal_form(psi, s.position))
    emit({
        "k": psi.k,
        "singularities": singularities,
        "normal_forms": forms,
        "order_sum": sum(s.order for s in singularities),
        "admissible": report.admissible,
        "reasons": report.reasons,
    }, args.out)
    return 0


def flatmodel(args: argparse.Namespace) -> int:
    """Build the flat model of a differential, or validate a surface document."""
    source = load_source(args.document)
    if isinstance(source, RationalKDifferential):
        surface = build_flat_model(source, window(args.window))
    else:
        surface = source
    atlas = get_atlas(surface)
    logger.info(
        f"Surface with {len(atlas.polys)} charts, {len(atlas.classes)} vertex classes, "
        f"Euler characteristic {atlas.euler_characteristic}"
    )
    emit(emit_surface(surface), args.out)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("analyze", help="singularities, normal forms and admissibility")
    parser.add_argument("document", help="differential JSON document")
    add_output(parser)
    parser.set_defaults(handler=analyze)

    parser = subparsers.add_parser("flatmodel", help="build or ingest a flat surface")
    parser.add_argument("document", help="differential or surface JSON document")
    parser.add_argument("--window", nargs=4, type=float, metavar=("XMIN", "XMAX", "YMIN", "YMAX"),
                        help="truncate the z-plane to this window")
    add_output(parser)
    parser.set_defaults(handler=flatmodel)
