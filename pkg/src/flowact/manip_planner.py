"""Turn an object trajectory into a grasp or push subgoal plan."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateDirection
from .flowio import DepthImage, MaskImage
from .geometry import CameraIntrinsics
from .tracking import DEFAULT_NUM_POINTS

LIFT_THRESHOLD = 0.10
PUSH_STANDOFF = 0.10
REPLAN_WINDOW = 15
REPLAN_MIN_MOTION = 0.001
CAMERA_UP = (0.0, -1.0, 0.0)


class Mode(str, Enum):
    GRASP = "Grasp"
    PUSH = "Push"

    def __str__(self):
        return self.value


def contact_point(K: CameraIntrinsics, depth0: DepthImage, mask: MaskImage, n: int = DEFAULT_NUM_POINTS, seed=0, method: str = "centroid") -> np.ndarray:
    """Centroid of n mask pixels backprojected with depth0.

    method="sample" returns one of those backprojected points instead.
    """
    from .rigid_solver import initial_points

    _, P = initial_points(K, depth0, mask, n, seed)
    if method == "centroid":
        return P.mean(axis=0)
    if method == "sample":
        return P[int(np.random.default_rng(seed).integers(P.shape[0]))]
    raise ValueError(f"unknown contact method {method!r}")


def build_subgoals(contact, trajectory: list) -> list[np.ndarray]:
    """Contact point carried by each cumulative pose."""
    if not trajectory:
        raise ValueError("trajectory is empty")
    c = np.asarray(contact, dtype=float)
    return [T.apply(c) for T in trajectory]


def decide_mode(subgoals, contact, lift_threshold: float = LIFT_THRESHOLD, up=CAMERA_UP) -> Mode:
    if len(subgoals) == 0:
        raise ValueError("no subgoals")
    up = np.asarray(up, dtype=float)
    up = up / np.linalg.norm(up)
    lift = np.abs((np.asarray(subgoals, dtype=float) - np.asarray(contact, dtype=float)) @ up)
    return Mode.GRASP if lift.max() > lift_threshold else Mode.PUSH


def push_approach(contact, first_subgoal, standoff: float = PUSH_STANDOFF) -> np.ndarray:
    c = np.asarray(contact, dtype=float)
    d = np.asarray(first_subgoal, dtype=float) - c
    norm = np.linalg.norm(d)
    if not norm > 1e-6:
        raise DegenerateDirection(f"first subgoal is {norm:.3g} m from the contact point")
    return c - standoff * (d / norm)


class ReplanMonitor:
    """Flags a stall once `window` consecutive positions moved less than
    `min_motion` between every pair of neighbours. One per episode."""

    def __init__(self, window: int = REPLAN_WINDOW, min_motion: float = REPLAN_MIN_MOTION):
        if window < 2:
            raise ValueError("window must hold at least two positions")
        self.window = window
        self.min_motion = min_motion
        self.history: deque = deque(maxlen=window)

    def should_replan(self, position) -> bool:
        self.history.append(np.asarray(position, dtype=float).copy())
        if len(self.history) < self.window:
            return False
        H = np.asarray(self.history)
        return bool(np.linalg.norm(np.diff(H, axis=0), axis=1).max() < self.min_motion)

    def reset(self) -> None:
        self.history.clear()


def should_replan(monitor: ReplanMonitor, new_position) -> bool:
    return monitor.should_replan(new_position)


@dataclass(eq=False)
class SubgoalPlan:
    mode: Mode
    contact: np.ndarray
    subgoals: list = field(default_factory=list)
    approach: np.ndarray | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if (self.approach is not None) != (self.mode is Mode.PUSH):
            raise ValueError("an approach point is present exactly when mode is Push")

    def to_dict(self) -> dict:
        d = {
            "schema": "flowact.plan/1",
            "mode": str(self.mode),
            "contact": np.asarray(self.contact, dtype=float).tolist(),
            "subgoals": [np.asarray(s, dtype=float).tolist() for s in self.subgoals],
        }
        if self.approach is not None:
            d["approach"] = np.asarray(self.approach, dtype=float).tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d) -> "SubgoalPlan":
        a = d.get("approach")
        return cls(
            Mode(d["mode"]),
            np.asarray(d["contact"], dtype=float),
            [np.asarray(s, dtype=float) for s in d["subgoals"]],
            None if a is None else np.asarray(a, dtype=float),
        )


def make_plan(contact, trajectory: list, lift_threshold=LIFT_THRESHOLD, standoff=PUSH_STANDOFF, up=CAMERA_UP, mode: Mode | None = None) -> SubgoalPlan:
    """Subgoals, mode and (for Push) the approach point. Passing `mode` pins it,
    which is how a replan keeps the original decision."""
    contact = np.asarray(contact, dtype=float)
    subgoals = build_subgoals(contact, trajectory)
    if mode is None:
        mode = decide_mode(subgoals, contact, lift_threshold, up)
    approach = push_approach(contact, subgoals[0], standoff) if Mode(mode) is Mode.PUSH else None
    return SubgoalPlan(Mode(mode), contact, subgoals, approach)


def replan(previous: SubgoalPlan, contact, trajectory: list, standoff=PUSH_STANDOFF) -> SubgoalPlan:
    """New subgoals from a fresh trajectory; the mode never changes and a
    Push plan gets a new approach point to re-seat the gripper."""
    return make_plan(contact, trajectory, standoff=standoff, mode=previous.mode)


def plan_from_observation(
    K: CameraIntrinsics,
    depth0: DepthImage,
    mask: MaskImage,
    flows: list,
    seed=0,
    n_points: int = DEFAULT_NUM_POINTS,
    lift_threshold: float = LIFT_THRESHOLD,
    standoff: float = PUSH_STANDOFF,
    up=CAMERA_UP,
    contact_method: str = "centroid",
    **solve_kw,
):
    """Full manipulation pipeline; returns (plan, trajectory result)."""
    from .rigid_solver import track_and_solve

    traj = track_and_solve(K, depth0, mask, flows, seed=seed, n_points=n_points, **solve_kw)
    c = contact_point(K, depth0, mask, n_points, seed, contact_method)
    return make_plan(c, traj.poses, lift_threshold, standoff, up), traj
