"""
Helpers shared by the command modules.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Union

from app.models.differential import RationalKDifferential
from app.models.surface import FlatSurface
from app.services import document_service
from app.services.differential_service import parse_differential
from app.services.flat_model_service import ingest_gluing

logger = logging.getLogger(__name__)


def add_output(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", "-o", type=Path, default=None, help="write JSON here instead of stdout")


def emit(value: Any, out: Optional[Path] = None) -> None:
    """JSON document to a file (atomic) or stdout."""
    if out is None:
        sys.stdout.write(document_service.dumps(value) + "\n")
        sys.stdout.flush()
    else:
        document_service.write_json(out, value)
        logger.info(f"Wrote {out}")


def load_source(path: Union[str, Path]) -> Union[RationalKDifferential, FlatSurface]:
    """A differential document (has 'leading') or a surface document (has 'polygons')."""
    doc = document_service.read_json(path)
    if "leading" in doc:
        return parse_differential(doc)
    return ingest_gluing(doc)


def load_surface(path: Union[str, Path]) -> FlatSurface:
    return ingest_gluing(document_service.read_json(path))


def window(values) -> Optional[tuple]:
    return tuple(float(v) for v in values) if values else None
