"""
Shared field types for document models.
"""
from typing import Annotated, Any

from pydantic import BeforeValidator, PlainSerializer


def _to_complex(value: Any) -> complex:
    """Accept [re, im] pairs, numbers or complex values."""
    if isinstance(value, complex):
        return value
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    raise ValueError("expected a [re, im] pair")


def _pair(value: complex) -> list:
    return [float(value.real), float(value.imag)]


# Complex scalar stored as a [re, im] pair in documents
ComplexPair = Annotated[
    complex,
    BeforeValidator(_to_complex),
    PlainSerializer(_pair, return_type=list),
]
