"""Discrete navigation actions from per-step scene transforms.

A probe point one meter ahead of the camera is moved by the estimated scene
transform; its displacement picks the action.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ReplanNeeded
from .flowio import DepthImage, FlowField, MaskImage, scene_mask_from_flow
from .geometry import CameraIntrinsics, Pose
from .rigid_solver import track_and_solve
from .tracking import DEFAULT_NUM_POINTS, REPLAN_INLIER_FRACTION

REPLAN_NEEDED = "ReplanNeeded"


class NavAction(str, Enum):
    MOVE_FORWARD = "MoveForward"
    ROTATE_LEFT = "RotateLeft"
    ROTATE_RIGHT = "RotateRight"
    DONE = "Done"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class NavThresholds:
    probe_distance: float = 1.0
    done_eps: float = 0.001
    forward_max_lateral: float = 0.25
    flow_mask_threshold: float = 1.0
    num_points: int = DEFAULT_NUM_POINTS
    replan_fraction: float = REPLAN_INLIER_FRACTION

    def __post_init__(self):
        for name in ("probe_distance", "done_eps", "forward_max_lateral"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def probe_displacement(scene_T: Pose, th: NavThresholds = NavThresholds()) -> np.ndarray:
    p = np.array([0.0, 0.0, th.probe_distance])
    return scene_T.apply(p) - p


def infer_nav_action(scene_T: Pose, th: NavThresholds = NavThresholds()) -> NavAction:
    d = probe_displacement(scene_T, th)
    if np.linalg.norm(d) < th.done_eps:
        return NavAction.DONE
    if abs(d[0]) < th.forward_max_lateral:
        return NavAction.MOVE_FORWARD
    # turning left swings the scene to the right (+x)
    return NavAction.ROTATE_LEFT if d[0] > 0 else NavAction.ROTATE_RIGHT


@dataclass(eq=False)
class NavEpisodeResult:
    actions: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    replan: bool = False
    inlier_ratio: float | None = None

    def as_strings(self) -> list[str]:
        return [str(a) for a in self.actions] + ([REPLAN_NEEDED] if self.replan else [])

    def to_json(self) -> str:
        return json.dumps({"schema": "flowact.nav_actions/1", "actions": self.as_strings()})


def run_nav_episode(
    flows: list[FlowField],
    depth0: DepthImage,
    K: CameraIntrinsics,
    th: NavThresholds = NavThresholds(),
    seed=0,
) -> NavEpisodeResult:
    """Infer one action per flow step until Done, or stop with a replan marker.

    The scene mask is the set of first-frame pixels whose flow magnitude
    exceeds the threshold; with nothing moving the episode is a single Done.
    Tracks leaving the image are the only ones dropped.
    """
    if not flows:
        raise ValueError("need at least one flow field")
    mask = scene_mask_from_flow(flows[0], th.flow_mask_threshold)
    result = NavEpisodeResult()
    if not (mask.member & depth0.valid).any():
        result.actions.append(NavAction.DONE)
        return result
    try:
        traj = track_and_solve(
            K, depth0, mask, flows, seed=seed, n_points=th.num_points, use_ransac=False, replan_fraction=th.replan_fraction
        )
        increments = traj.increments
    except ReplanNeeded as exc:
        increments = exc.partial.increments if exc.partial is not None else []
        result.replan = True
        result.inlier_ratio = exc.ratio
    for inc in increments:
        a = infer_nav_action(inc, th)
        result.actions.append(a)
        result.increments.append(inc)
        if a is NavAction.DONE:
            result.replan = False
            break
    return result


@dataclass
class WorldEpisode:
    success: bool
    final_distance: float
    actions: list
    replans: int
    steps: int


def run_world_episode(world, th: NavThresholds = NavThresholds(), seed=0, frames: int = 8, max_steps: int = 150) -> WorldEpisode:
    """Closed loop in the simulator: render an expert video from the current
    state, infer actions from its flows, execute them, and replan as needed."""
    from .simulator import expert_actions, nav_world_step, render_expert_video

    executed = []
    replans = 0
    rng = np.random.default_rng(seed)
    while not world.ended and world.steps_taken < max_steps:
        video = render_expert_video(world, expert_actions(world), frames=frames)
        ep = run_nav_episode(video.flows, video.depth0, world.K, th, seed=rng)
        for a in ep.actions:
            world = nav_world_step(world, a)
            executed.append(a)
            if world.ended or world.steps_taken >= max_steps:
                break
        if not world.ended:
            replans += 1
    return WorldEpisode(
        success=bool(world.ended and world.success),
        final_distance=world.distance_to_target(),
        actions=executed,
        replans=replans,
        steps=world.steps_taken,
    )
