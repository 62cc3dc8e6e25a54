import json
import math

import numpy as np
import pytest

from conesurf import (
    GeometryError,
    SchemaError,
    TopologyError,
    build_surface,
    builtin_octagon,
    builtin_slit_tori,
    cone_excess_min,
    develop_across,
    load_surface,
)

TWO_PI = 2 * math.pi


def square_torus_spec():
    return [[[0, 0], [1, 0], [1, 1], [0, 1]]], [((0, 0), (0, 2)), ((0, 1), (0, 3))]


def test_octagon_cone_structure(octagon):
    assert len(octagon.cones) == 1
    assert octagon.cones[0].total_angle == pytest.approx(6 * math.pi, abs=1e-12)
    assert octagon.theta0 == pytest.approx(4 * math.pi, abs=1e-12)
    assert octagon.genus == 2


def test_octagon_gauss_bonnet_exact(octagon):
    total = sum(c.excess for c in octagon.cones)
    assert abs(total - TWO_PI * (2 * octagon.genus - 2)) < 1e-9


def test_slit_tori_two_cones(slit_tori):
    assert len(slit_tori.cones) == 2
    for c in slit_tori.cones:
        assert c.total_angle == pytest.approx(4 * math.pi, abs=1e-12)
    assert slit_tori.genus == 2
    assert cone_excess_min(slit_tori) == pytest.approx(2 * math.pi, abs=1e-12)


def test_square_torus_rejected():
    polys, pairs = square_torus_spec()
    with pytest.raises(TopologyError):
        build_surface(polys, pairs)


def test_nonparallel_gluing_rejected():
    polys = [[[0, 0], [2, 0], [2, 1], [0, 1]], [[0, 0], [1, 0], [1, 1], [0, 1]]]
    with pytest.raises(GeometryError):
        build_surface(polys, [((0, 0), (1, 2)), ((0, 1), (0, 3)), ((0, 2), (1, 0)), ((1, 1), (1, 3))])


def test_nonconvex_chart_rejected():
    polys = [[[0, 0], [2, 0], [1, 0.2], [2, 1], [0, 1]]]
    with pytest.raises(GeometryError):
        build_surface(polys, [])


def test_develop_across_shared_edge(octagon):
    f0 = octagon.identity_frame(0)
    for e in range(8):
        f1 = develop_across(octagon, f0, e)
        _c2, e2, _t = octagon.glue(0, e)
        a = octagon.charts[0].vertices[e] + np.asarray(f0.offset)
        b = octagon.charts[0].vertices[(e + 1) % 8] + np.asarray(f0.offset)
        a2 = octagon.charts[f1.chart].vertices[(e2 + 1) % 8] + np.asarray(f1.offset)
        b2 = octagon.charts[f1.chart].vertices[e2] + np.asarray(f1.offset)
        assert np.hypot(*(a - a2)) < 1e-12
        assert np.hypot(*(b - b2)) < 1e-12


def test_develop_round_trip_identity(octagon):
    f0 = octagon.identity_frame(0)
    for e in range(8):
        f1 = develop_across(octagon, f0, e)
        _c, e2, _t = octagon.glue(0, e)
        f2 = develop_across(octagon, f1, e2)
        assert f2.chart == 0
        assert np.hypot(*np.asarray(f2.offset)) < 1e-12


def test_vertex_fan_total_angles(octagon, slit_tori):
    fan = octagon.vertex_fan(0, 0)
    assert fan.total == pytest.approx(6 * math.pi, abs=1e-11)
    assert len(fan.corners) == 8
    cone_corner = slit_tori.cones[0].vertex_orbit[0]
    fan2 = slit_tori.vertex_fan(*cone_corner)
    assert fan2.total == pytest.approx(4 * math.pi, abs=1e-11)


def test_json_loader_round_trip(tmp_path, octagon):
    doc = {
        "name": "octagon",
        "polygons": [
            {"id": 0, "vertices": [list(map(float, v)) for v in octagon.charts[0].vertices]}
        ],
        "gluings": [{"a": [0, k], "b": [0, k + 4]} for k in range(4)],
    }
    path = tmp_path / "oct.json"
    path.write_text(json.dumps(doc))
    surf = load_surface(str(path))
    assert surf.genus == 2
    assert surf.theta0 == pytest.approx(4 * math.pi, abs=1e-12)


def test_loader_schema_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("not json {")
    with pytest.raises(SchemaError):
        load_surface(str(path))
    with pytest.raises(SchemaError):
        load_surface({"polygons": "nope", "gluings": []})
    with pytest.raises(SchemaError):
        load_surface({"polygons": [{"id": 0, "vertices": [[0, 0], [1, 0], [0, 1]]}], "gluings": [{"a": [0, 9], "b": [0, 1]}]})


def test_slit_tori_flat_classes_do_not_change_theta0(slit_tori):
    flats = [vc for vc in slit_tori.vertex_classes if abs(vc.total_angle - TWO_PI) <= 1e-9]
    assert len(flats) == 4
    cone_total = sum(c.excess for c in slit_tori.cones)
    assert cone_total == pytest.approx(TWO_PI * (2 * slit_tori.genus - 2), abs=1e-9)


def test_diameter_bound_positive(octagon, slit_tori):
    assert octagon.diameter_bound == pytest.approx(2.0)
    assert slit_tori.diameter_bound > 0
