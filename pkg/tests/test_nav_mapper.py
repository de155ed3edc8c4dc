import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowact import simulator as sim
from flowact.flowio import DepthImage, FlowField
from flowact.geometry import CameraIntrinsics, Pose, random_rotation, rotation_about
from flowact.nav_mapper import (
    REPLAN_NEEDED,
    NavAction,
    NavThresholds,
    infer_nav_action,
    run_nav_episode,
    run_world_episode,
)

F, L, R, D = NavAction.MOVE_FORWARD, NavAction.ROTATE_LEFT, NavAction.ROTATE_RIGHT, NavAction.DONE


def yaw_left(deg):
    # a left turn of the camera (about its up axis, -y) moves the scene by the inverse
    return Pose(rotation_about([0, -1, 0], np.deg2rad(deg)), np.zeros(3)).inverse()


def test_action_examples():
    assert infer_nav_action(Pose.identity()) is D
    assert infer_nav_action(Pose.from_translation([0, 0, -0.25])) is F
    assert infer_nav_action(yaw_left(30)) is L
    assert infer_nav_action(yaw_left(-30)) is R


def test_left_turn_probe_displacement():
    d = yaw_left(30).apply([0, 0, 1.0]) - [0, 0, 1.0]
    assert np.isclose(d[0], 0.5)


@given(st.floats(1e-3, 100))
def test_identity_done_for_any_probe(dist):
    assert infer_nav_action(Pose.identity(), NavThresholds(probe_distance=dist)) is D


@given(arrays(float, 3, elements=st.floats(-1, 1)), st.floats(0, 3), arrays(float, 3, elements=st.floats(-1, 1)))
def test_mirror_symmetry(axis, angle, t):
    n = np.linalg.norm(axis)
    if n < 1e-3:
        return
    T = Pose(rotation_about(axis, angle), t)
    S = np.diag([-1.0, 1, 1])
    M = Pose(S @ T.rotation @ S, S @ T.translation)
    swap = {L: R, R: L, F: F, D: D}
    assert infer_nav_action(M) is swap[infer_nav_action(T)]


def test_threshold_validation():
    with pytest.raises(ValueError):
        NavThresholds(done_eps=0)


def test_zero_flow_episode():
    flows = [FlowField.zeros(32, 24)] * 4
    ep = run_nav_episode(flows, DepthImage(np.ones((24, 32))), CameraIntrinsics(30, 30, 16, 12))
    assert ep.as_strings() == ["Done"]


@pytest.mark.parametrize(
    "script, expect",
    [([F, F, F, D], ["MoveForward"] * 3 + ["Done"]), ([L, D], ["RotateLeft", "Done"]), ([R, D], ["RotateRight", "Done"])],
)
def test_simulator_episodes(script, expect):
    world = sim.scripted_nav_world(0)
    video = sim.render_expert_video(world, script)
    ep = run_nav_episode(video.flows, video.depth0, world.K)
    assert ep.as_strings() == expect
    assert json.loads(ep.to_json())["actions"] == expect


def test_dropout_episode_emits_replan_marker():
    world = sim.scripted_nav_world(0)
    video = sim.render_expert_video(world, [L, L, L, D])
    ep = run_nav_episode(video.flows, video.depth0, world.K)
    assert ep.as_strings()[-1] == REPLAN_NEEDED
    assert ep.as_strings()[0] == "RotateLeft"


def test_world_episode_succeeds():
    world = sim.make_nav_world(np.random.default_rng(7))
    r = run_world_episode(world, seed=7)
    assert r.success and r.final_distance <= 1.5 and r.actions[-1] is D
