import json
import math
import os

import numpy as np
import pytest

from goalgraph.errors import DataError
from goalgraph.scene import (
    AgentTrack,
    LaneDef,
    Scene,
    load_dataset,
    load_scene,
    save_scene,
    scene_from_dict,
    scene_to_dict,
)

from conftest import const_vel_track, make_line_scene, straight_lane


def test_heading_from_velocity():
    tr = const_vel_track("a", "vehicle", 0, 0, 5.0, 0.0, 10)
    assert np.allclose(tr.headings(), 0.0)


def test_heading_carried_when_slow():
    st = np.zeros((4, 5))
    st[:, 4] = 1.0
    st[0, 2:4] = (0.0, 3.0)    # moving +y
    st[1:, 2:4] = (0.01, 0.0)  # below the 0.1 m/s confidence threshold
    tr = AgentTrack("a", "vehicle", st)
    assert np.allclose(tr.headings(), math.pi / 2)


def test_heading_default_zero():
    st = np.zeros((3, 5))
    st[:, 4] = 1.0
    tr = AgentTrack("a", "vehicle", st)
    assert np.allclose(tr.headings(), 0.0)


def test_unknown_agent_class():
    with pytest.raises(DataError):
        AgentTrack("a", "zeppelin", np.zeros((3, 5)))


def test_road_bound_flag():
    assert const_vel_track("a", "vehicle", 0, 0, 1, 0, 3).road_bound
    assert not const_vel_track("p", "pedestrian", 0, 0, 1, 0, 3).road_bound


def test_lane_length_and_midpoint():
    lane = straight_lane("L", 0, 0, 60.0)
    assert lane.length == pytest.approx(60.0)
    mp = lane.midpoint_pose()
    assert (mp.x, mp.y, mp.heading) == pytest.approx((30.0, 0.0, 0.0))


def test_lane_polygon_orientation():
    lane = straight_lane("L", 0, 0, 10.0, width=4.0, n=2)
    poly = lane.polygon()
    assert poly.shape == (4, 2)
    # left boundary then reversed right boundary forms a simple quad
    assert np.allclose(poly[0], [0.0, 2.0])
    assert np.allclose(poly[-1], [0.0, -2.0])


def test_scene_rejects_bad_connectivity():
    lane = straight_lane("L0", 0, 0, 10.0, successors=["nope"])
    with pytest.raises(DataError):
        Scene("s", 0.1, 2, 2, [], [lane])


def test_scene_rejects_bad_state_length():
    lane = straight_lane("L0", 0, 0, 10.0)
    tr = const_vel_track("a", "vehicle", 0, 0, 1, 0, 7)
    with pytest.raises(DataError):
        Scene("s", 0.1, 2, 2, [tr], [lane])


def test_derived_points_cover_sides():
    sc = make_line_scene(n_lanes=1, lane_len=10.0)
    sides = {p.side for p in sc.points}
    assert sides == {"left", "right", "center"}
    assert all(p.seg_length > 0 for p in sc.points)


def test_predicted_agents_requires_valid_last_history_step():
    T = 40
    valid = np.ones(T)
    valid[9] = 0.0  # invalid at T_h - 1
    lane = straight_lane("L0", 0, 0, 60.0)
    a = const_vel_track("a", "vehicle", 0, 0, 10, 0, T, valid=valid)
    b = const_vel_track("b", "vehicle", 0, 4, 10, 0, T)
    sc = Scene("s", 0.1, 10, 30, [a, b], [lane])
    assert sc.predicted_agents() == [1]


def test_roundtrip_dict(line_scene):
    d = scene_to_dict(line_scene)
    sc2 = scene_from_dict(d)
    assert sc2.id == line_scene.id
    assert np.allclose(sc2.agents[0].states, line_scene.agents[0].states)
    assert np.allclose(sc2.lanes[1].centerline, line_scene.lanes[1].centerline)
    assert sc2.lanes[0].successors == line_scene.lanes[0].successors


def test_save_load_roundtrip(line_scene, tmp_path):
    p = str(tmp_path / "scene.json")
    save_scene(line_scene, p)
    sc2 = load_scene(p)
    assert np.allclose(sc2.agents[0].states, line_scene.agents[0].states)


def test_load_scene_parse_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"id": "x",\n  broken\n}')
    with pytest.raises(DataError, match="line"):
        load_scene(str(p))


def test_load_dataset_skips_manifests(line_scene, tmp_path):
    save_scene(line_scene, str(tmp_path / "scene_00000.json"))
    (tmp_path / "manifest.json").write_text("{}")
    (tmp_path / "run_manifest.json").write_text("{}")
    ds = load_dataset(str(tmp_path))
    assert len(ds) == 1


def test_transformed_scene_preserves_relative_geometry(line_scene):
    sc2 = line_scene.transformed(12.0, -7.0, 0.9)
    a, b = line_scene.agents[0].states, sc2.agents[0].states
    # distances between timesteps preserved
    d0 = np.hypot(*(a[5, :2] - a[0, :2]))
    d1 = np.hypot(*(b[5, :2] - b[0, :2]))
    assert d0 == pytest.approx(d1, abs=1e-9)
    # speed magnitude preserved
    assert np.hypot(*a[0, 2:4]) == pytest.approx(np.hypot(*b[0, 2:4]), abs=1e-9)
