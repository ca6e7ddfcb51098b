"""
Service for reading and writing JSON documents.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

from pydantic import BaseModel

from app.core.exceptions import SchemaError

logger = logging.getLogger(__name__)


def to_jsonable(value: Any) -> Any:
    """Convert models, complex numbers and numpy scalars to plain JSON values."""
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json", by_alias=True)
    if isinstance(value, complex):
        return [float(value.real), float(value.imag)]
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return to_jsonable(value.tolist())
    return value


def dumps(value: Any) -> str:
    """Deterministic JSON text: sorted keys, shortest float repr."""
    return json.dumps(to_jsonable(value), sort_keys=True, indent=2, allow_nan=True)


def read_json(path: Union[str, Path]) -> Dict:
    """
    Read a JSON document.

    Raises:
        SchemaError: unreadable file or invalid JSON
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise SchemaError(f"document not found: {path}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e


def write_text(path: Union[str, Path], text: str) -> Path:
    """
    Write text atomically.

    Args:
        path: destination file
        text: content

    Returns:
        The written path
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)

    # Write to temporary file first, then rename (atomic operation)
    temp_file = target.with_suffix(target.suffix + ".tmp")
    with open(temp_file, "w", encoding="utf-8") as f:
        f.write(text)
        f.flush()
    temp_file.replace(target)
    logger.debug(f"Wrote {target}")
    return target


def write_json(path: Union[str, Path], value: Any) -> Path:
    return write_text(path, dumps(value) + "\n")


def write_bytes(path: Union[str, Path], data: bytes) -> Path:
    """Atomic binary write."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    temp_file = target.with_suffix(target.suffix + ".tmp")
    with open(temp_file, "wb") as f:
        f.write(data)
        f.flush()
    temp_file.replace(target)
    return target
