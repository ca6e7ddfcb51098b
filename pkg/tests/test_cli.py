import json

import pytest

from app.cli.router import run
from tests.conftest import data_path


def _stdout(capsys):
    return json.loads(capsys.readouterr().out)


def test_analyze_prints_the_singularity_table(capsys):
    assert run(["analyze", str(data_path("cubic_differential.json"))]) == 0
    doc = _stdout(capsys)
    assert sorted(s["order"] for s in doc["singularities"]) == [-3, -3, -2, 2]
    assert doc["order_sum"] == -6
    assert doc["admissible"] is True


def test_flatmodel_echoes_a_surface(capsys):
    assert run(["flatmodel", str(data_path("torus_surface.json"))]) == 0
    doc = _stdout(capsys)
    assert doc["k"] == 2
    assert len(doc["polygons"]) == 1


def test_trace_writes_a_document(tmp_path):
    out = tmp_path / "trace.json"
    status = run(["trace", str(data_path("torus_surface.json")), str(data_path("torus_seeds.json")), "-o", str(out)])
    assert status == 0
    assert out.exists()


def test_hs_solve_of_the_cubic(capsys):
    assert run(["hs", "solve", str(data_path("cubic_problem.json"))]) == 0
    doc = _stdout(capsys)
    assert doc["found"] == 1
    assert [c[0] for c in doc["pairs"][0]["S"]] == pytest.approx([0, -1, 0, 1])


def test_refusal_has_its_own_exit_status(capsys):
    assert run(["strebel", str(data_path("gate_sqrt2_surface.json"))]) == 4
    assert "kdiff:" in capsys.readouterr().err


def test_empty_layer_list_is_a_schema_error():
    assert run(["render", str(data_path("torus_surface.json")), "--layers", ""]) == 2


def test_render_to_a_file(tmp_path):
    out = tmp_path / "torus.svg"
    assert run(["render", str(data_path("torus_surface.json")), "--layers", "tiles", "-o", str(out)]) == 0
    assert "<svg" in out.read_text(encoding="utf-8")


def test_malformed_document_is_a_schema_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"k": 3, "leading": [1, 0], "zeros": [{"z": [0, 0]}]}), encoding="utf-8")
    assert run(["analyze", str(bad)]) == 2


def test_unknown_command_is_a_usage_error():
    assert run(["unfold"]) == 2
