"""
Command for drawing exported documents as SVG.
"""
import argparse
import logging
import sys
from pathlib import Path

from app.cli.common import load_surface, window
from app.models.render import LAYERS, RenderSpec
from app.services import document_service, render_service

logger = logging.getLogger(__name__)


def render(args: argparse.Namespace) -> int:
    options = {"window": window(args.window), "width": args.width, "height": args.height}
    if args.layers is not None:
        chosen = {name.strip() for name in args.layers.split(",") if name.strip()}
        unknown = chosen - set(LAYERS)
        if unknown:
            raise ValueError(f"unknown layers {sorted(unknown)}; choose from {list(LAYERS)}")
        options.update({name: name in chosen for name in LAYERS})
    spec = RenderSpec(**options)
    surface = load_surface(args.surface) if args.surface else None
    scene = render_service.scene_from_document(document_service.read_json(args.document), surface)
    svg = render_service.emit_svg(scene, spec)
    if args.out is None:
        sys.stdout.write(svg)
    else:
        document_service.write_text(args.out, svg)
        logger.info(f"Wrote {args.out}")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("render", help="draw a document as SVG")
    parser.add_argument("document", help="trajectory, structure, decomposition, measure, grid or surface document")
    parser.add_argument("--surface", default=None, help="surface document placing charts in one frame")
    parser.add_argument("--layers", default=None, help=f"comma-separated subset of {','.join(LAYERS)}")
    parser.add_argument("--window", nargs=4, type=float, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    parser.add_argument("--width", type=int, default=640)
    parser.add_argument("--height", type=int, default=640)
    parser.add_argument("--out", "-o", type=Path, default=None, help="SVG file, stdout by default")
    parser.set_defaults(handler=render)
