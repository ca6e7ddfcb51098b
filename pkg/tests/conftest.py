"""
Shared fixtures: the encoded example documents under data/.
"""
import json
from pathlib import Path

import pytest

from app.models.hs import HSProblem
from app.services.differential_service import parse_differential
from app.services.flat_model_service import ingest_gluing

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def data_path(name: str) -> Path:
    return DATA_DIR / name


def load_doc(name: str) -> dict:
    with open(data_path(name), "r", encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def cubic_cylinders_surface():
    return ingest_gluing(load_doc("cubic_cylinders_surface.json"))


@pytest.fixture(scope="session")
def order_twelve_surface():
    return ingest_gluing(load_doc("order_twelve_surface.json"))


@pytest.fixture(scope="session")
def quartic_square_surface():
    return ingest_gluing(load_doc("quartic_square_surface.json"))


@pytest.fixture(scope="session")
def torus():
    return ingest_gluing(load_doc("torus_surface.json"))


@pytest.fixture(scope="session")
def parallelogram():
    return ingest_gluing(load_doc("parallelogram_surface.json"))


@pytest.fixture(scope="session")
def pillowcase():
    return ingest_gluing(load_doc("pillowcase_surface.json"))


@pytest.fixture(scope="session")
def torus_piece():
    return ingest_gluing(load_doc("torus_piece_surface.json"))


@pytest.fixture(scope="session")
def gate_rational():
    return ingest_gluing(load_doc("gate_3_2_surface.json"))


@pytest.fixture(scope="session")
def gate_irrational():
    return ingest_gluing(load_doc("gate_sqrt2_surface.json"))


@pytest.fixture
def cubic_differential():
    return parse_differential(load_doc("cubic_differential.json"))


@pytest.fixture
def band_differential():
    return parse_differential(load_doc("band_differential.json"))


@pytest.fixture
def quartic_q_problem() -> HSProblem:
    return HSProblem.model_validate(load_doc("quartic_q_problem.json"))


@pytest.fixture
def sextic_problem() -> HSProblem:
    return HSProblem.model_validate(load_doc("sextic_problem.json"))


@pytest.fixture
def cubic_problem() -> HSProblem:
    return HSProblem.model_validate(load_doc("cubic_problem.json"))
