"""Shared fixtures: hand-built scenes and small model configurations."""

import numpy as np
import pytest

# one-line verdicts from test_acceptance.py, printed after the test run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from goalgraph.scene import AgentTrack, LaneDef, Scene
from goalgraph.synthgen import STYLE_A, gen_scene


def straight_lane(lane_id, x0, y0, length, width=3.7, n=None, heading=0.0, **kw):
    """Axis-aligned or rotated straight lane starting at (x0, y0)."""
    if n is None:
        n = max(2, int(length / 2.0) + 1)
    s = np.linspace(0.0, length, n)
    c, si = np.cos(heading), np.sin(heading)
    center = np.stack([x0 + s * c, y0 + s * si], axis=1)
    nx, ny = -si, c
    half = width / 2.0
    left = center + half * np.array([nx, ny])
    right = center - half * np.array([nx, ny])
    return LaneDef(lane_id, kw.pop("lane_type", "lane"), center, left, right, **kw)


def const_vel_track(agent_id, cls, x0, y0, vx, vy, T, dt=0.1, valid=None):
    t = np.arange(T) * dt
    st = np.zeros((T, 5))
    st[:, 0] = x0 + vx * t
    st[:, 1] = y0 + vy * t
    st[:, 2] = vx
    st[:, 3] = vy
    st[:, 4] = 1.0 if valid is None else valid
    return AgentTrack(agent_id, cls, st)


def make_line_scene(t_history=10, t_future=30, dt=0.1, n_lanes=3, lane_len=60.0,
                    n_vehicles=1, n_peds=0, scene_id="line"):
    """Chain of straight lanes along +x with constant-velocity agents."""
    T = t_history + t_future
    lanes = []
    for i in range(n_lanes):
        suc = [f"L{i+1}"] if i + 1 < n_lanes else []
        pre = [f"L{i-1}"] if i > 0 else []
        lanes.append(straight_lane(f"L{i}", i * lane_len, 0.0, lane_len,
                                   successors=suc, predecessors=pre))
    agents = []
    for j in range(n_vehicles):
        agents.append(const_vel_track(f"veh{j}", "vehicle", 2.0 + 6.0 * j, 0.0,
                                      10.0, 0.0, T, dt))
    for j in range(n_peds):
        agents.append(const_vel_track(f"ped{j}", "pedestrian", 5.0, 6.0 + 2.0 * j,
                                      1.0, 0.5, T, dt))
    return Scene(scene_id, dt, t_history, t_future, agents, lanes)


@pytest.fixture
def line_scene():
    return make_line_scene()


@pytest.fixture
def synth_scene():
    return gen_scene(STYLE_A, (11, 0), "synth0")


@pytest.fixture
def small_mcfg():
    from goalgraph.model import ModelConfig
    return ModelConfig(d_h=32, heads=4, K=3, T_h=10, T_f=30,
                       ffn_hidden=64, dropout=0.0)
