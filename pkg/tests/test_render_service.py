import math

import numpy as np
import pytest

from app.core.exceptions import RenderError
from app.models.hs import RootMeasure
from app.models.render import RenderSpec, Scene, ScenePath
from app.models.trajectory import SurfacePoint
from app.services import potential_service as ps
from app.services import render_service as rs
from app.services import trajectory_service as ts
from app.services.document_service import to_jsonable


def test_surface_scene_has_every_layer_group(quartic_square_surface):
    svg = rs.emit_svg(rs.scene_from_surface(quartic_square_surface), RenderSpec())
    assert svg.startswith("<?xml")
    assert "<svg" in svg
    for layer in ("tiles", "critical_graph", "switching_set"):
        assert f'<g id="{layer}">' in svg
    assert ">I</text>" in svg


def test_disabled_layers_are_left_out(quartic_square_surface):
    spec = RenderSpec(trajectories=False, atoms=False, potential=False, switching_set=False, critical_graph=False)
    svg = rs.emit_svg(rs.scene_from_surface(quartic_square_surface), spec)
    assert '<g id="tiles">' in svg
    assert '<g id="critical_graph">' not in svg


def test_spec_needs_a_layer():
    with pytest.raises(ValueError, match="at least one layer"):
        RenderSpec(trajectories=False, critical_graph=False, switching_set=False,
                   tiles=False, atoms=False, potential=False)


def test_non_finite_points_are_refused():
    scene = Scene(paths=[ScenePath(layer="trajectories", points=[0j, complex(math.inf, 0)])])
    with pytest.raises(RenderError):
        rs.emit_svg(scene, RenderSpec())


def test_trajectory_document_renders(torus):
    trajectory = ts.trace(torus, SurfacePoint(polygon=0, z=0.3 + 0.5j))
    scene = rs.scene_from_document(to_jsonable(trajectory), torus)
    assert any(path.layer == "trajectories" for path in scene.paths)


def test_unknown_document_is_refused():
    with pytest.raises(RenderError):
        rs.scene_from_document({"colour": "blue"})


def test_potential_raster_draws_cells_and_contours():
    measure = RootMeasure(atoms=[-1, 0, 1])
    grid = ps.potential_grid(measure, resolution=64)
    scene = Scene(raster=grid)
    svg = rs.emit_svg(scene, RenderSpec(contours=3))
    assert svg.count("<rect") == grid.width * grid.height + 1
    assert 'class="contour"' in svg


def test_marching_squares_on_a_plane():
    xs = np.linspace(0.0, 1.0, 5)
    ys = np.linspace(0.0, 1.0, 5)
    values = np.add.outer(np.zeros(5), xs)  # value = x
    segments = rs.marching_squares(values, xs, ys, 0.6)
    assert len(segments) == 4
    for a, b in segments:
        assert a.real == pytest.approx(0.6)
        assert b.real == pytest.approx(0.6)
