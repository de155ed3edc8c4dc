"""Deterministic synthetic scenes rendered to ground-truth depth and flow,
plus a planar navigation world that executes discrete actions.

Rendering is a nearest-pixel point splat with a z-buffer. Flow at an owned
pixel is the displacement of the surface point seen at that pixel centre
(the pixel backprojected at its rendered depth), so depth and flow images
are mutually exact under the pinhole model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from shapely.geometry import Point, Polygon, box

from .errors import EpisodeEnded, FrameOutOfRange, NoPreviousPose
from .flowio import (
    DepthImage,
    FlowField,
    MaskImage,
    atomic_write_bytes,
    write_depth_pgm,
    write_flow,
    write_mask_pgm,
)
from .geometry import CameraIntrinsics, Pose, backproject_points, random_rotation, rotation_about

UNKNOWN_FLOW = 1e10

# object scenes
OBJECT_CAMERA = CameraIntrinsics(300.0, 300.0, 160.0, 120.0)
OBJECT_IMAGE_SIZE = (320, 240)
# navigation world
NAV_CAMERA = CameraIntrinsics(100.0, 100.0, 64.0, 64.0)
NAV_IMAGE_SIZE = (128, 128)

NAV_STEP = 0.25
NAV_TURN = np.deg2rad(30.0)
NAV_SUCCESS_RADIUS = 1.5


@dataclass(eq=False)
class SceneObject:
    """Points in the object frame and the object-to-world pose per frame."""

    points: np.ndarray
    poses: list


@dataclass(eq=False)
class SceneSpec:
    objects: list
    camera_poses: list  # camera-to-world per frame
    K: CameraIntrinsics
    width: int
    height: int

    def __post_init__(self):
        n = len(self.camera_poses)
        for k, obj in enumerate(self.objects):
            if len(obj.poses) != n:
                raise ValueError(f"object {k} has {len(obj.poses)} poses, camera has {n}")

    @property
    def frames(self) -> int:
        return len(self.camera_poses)

    def check_frame(self, t: int) -> None:
        if not 0 <= t < self.frames:
            raise FrameOutOfRange(f"frame {t} outside [0, {self.frames})")

    def object_in_camera(self, k: int, t: int) -> Pose:
        """Object-frame to camera-frame transform at frame t."""
        return self.camera_poses[t].inverse().compose(self.objects[k].poses[t])

    def scene_motion(self, k: int, t0: int, t1: int) -> Pose:
        """Camera-frame motion of object k between two frames."""
        a, b = self.object_in_camera(k, t0), self.object_in_camera(k, t1)
        if np.array_equal(a.matrix(), b.matrix()):
            return Pose.identity()
        return b.compose(a.inverse())

    def to_dict(self) -> dict:
        return {
            "schema": "flowact.scene/1",
            "intrinsics": self.K.to_dict(),
            "width": self.width,
            "height": self.height,
            "frames": self.frames,
            "camera_poses": [p.to_dict() for p in self.camera_poses],
            "object_poses": [[p.to_dict() for p in obj.poses] for obj in self.objects],
            "object_motion": [
                [self.scene_motion(k, 0, t).to_dict() for t in range(1, self.frames)] for k in range(len(self.objects))
            ],
        }


# ---------------------------------------------------------------------------
# rendering


def _splat(scene: SceneSpec, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Z-buffer splat: returns (depth, owner) with owner = -1 for empty pixels."""
    scene.check_frame(t)
    W, H, K = scene.width, scene.height, scene.K
    best_key = np.full(H * W, np.inf)
    depth = np.zeros(H * W)
    owner = np.full(H * W, -1, dtype=int)
    for k, obj in enumerate(scene.objects):
        Q = scene.object_in_camera(k, t).apply(obj.points)
        front = Q[:, 2] > 0
        Q = Q[front]
        z = Q[:, 2]
        u = np.floor(K.fx * Q[:, 0] / z + K.cx + 0.5).astype(np.int64)
        v = np.floor(K.fy * Q[:, 1] / z + K.cy + 0.5).astype(np.int64)
        inside = (u >= 0) & (u < W) & (v >= 0) & (v < H)
        pix = v[inside] * W + u[inside]
        zz = z[inside]
        if pix.size == 0:
            continue
        order = np.lexsort((zz, pix))
        pix, zz = pix[order], zz[order]
        first = np.ones(pix.size, dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        pix, zz = pix[first], zz[first]
        nearer = zz < best_key[pix]
        pix, zz = pix[nearer], zz[nearer]
        best_key[pix] = zz
        depth[pix] = zz
        owner[pix] = k
    return depth.reshape(H, W), owner.reshape(H, W)


def render_depth(scene: SceneSpec, frame: int) -> DepthImage:
    depth, _ = _splat(scene, frame)
    return DepthImage(depth)


def render_mask(scene: SceneSpec, frame: int, object_index: int = 0) -> MaskImage:
    _, owner = _splat(scene, frame)
    return MaskImage(owner == object_index)


def _dilate_owner(depth: np.ndarray, owner: np.ndarray, guard: int) -> tuple[np.ndarray, np.ndarray]:
    """Give empty pixels next to owned ones the nearest-depth neighbour's owner."""
    H, W = owner.shape
    for _ in range(guard):
        best_d = np.full((H, W), np.inf)
        best_o = np.full((H, W), -1)
        pad_d = np.pad(np.where(owner >= 0, depth, np.inf), 1, constant_values=np.inf)
        pad_o = np.pad(owner, 1, constant_values=-1)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                d = pad_d[1 + dr : 1 + dr + H, 1 + dc : 1 + dc + W]
                o = pad_o[1 + dr : 1 + dr + H, 1 + dc : 1 + dc + W]
                better = d < best_d
                best_d = np.where(better, d, best_d)
                best_o = np.where(better, o, best_o)
        fill = (owner < 0) & (best_o >= 0)
        depth = np.where(fill, best_d, depth)
        owner = np.where(fill, best_o, owner)
    return depth, owner


def flow_vectors(scene: SceneSpec, t0: int, t1: int, guard: int = 1) -> np.ndarray:
    """Float64 (H, W, 2) ground-truth flow from frame t0 to frame t1.

    Empty pixels carry zero flow, except a ``guard``-pixel ring around each
    object that extends its motion field, so subpixel lookups near object
    borders stay exact.
    """
    scene.check_frame(t0)
    scene.check_frame(t1)
    depth, owner = _splat(scene, t0)
    if guard > 0:
        depth, owner = _dilate_owner(depth, owner, guard)
    H, W = owner.shape
    flow = np.zeros((H, W, 2))
    K = scene.K
    for k in range(len(scene.objects)):
        rows, cols = np.nonzero(owner == k)
        if rows.size == 0:
            continue
        uv = np.column_stack([cols, rows]).astype(np.float64)
        X = backproject_points(K, uv, depth[rows, cols])
        Y = scene.scene_motion(k, t0, t1).apply(X)
        z = Y[:, 2]
        ok = z > 0
        du = np.full(z.shape, UNKNOWN_FLOW)
        dv = np.full(z.shape, UNKNOWN_FLOW)
        # difference of two identical projection formulas: exactly zero for a static pixel
        x0 = X[ok]
        du[ok] = (K.fx * Y[ok, 0] + K.cx * z[ok]) / z[ok] - (K.fx * x0[:, 0] + K.cx * x0[:, 2]) / x0[:, 2]
        dv[ok] = (K.fy * Y[ok, 1] + K.cy * z[ok]) / z[ok] - (K.fy * x0[:, 1] + K.cy * x0[:, 2]) / x0[:, 2]
        flow[rows, cols, 0] = du
        flow[rows, cols, 1] = dv
    return flow


def render_flow(scene: SceneSpec, t0: int, t1: int, guard: int = 1) -> FlowField:
    """``flow_vectors`` rounded to the float32 storage of a flow field."""
    return FlowField(flow_vectors(scene, t0, t1, guard).astype(np.float32))


def render_flows(scene: SceneSpec, guard: int = 1) -> list[FlowField]:
    return [render_flow(scene, t, t + 1, guard=guard) for t in range(scene.frames - 1)]


def project_tracks(scene: SceneSpec, object_index: int, points_obj: np.ndarray) -> np.ndarray:
    """Exact pixel positions (frames, N, 2) of object-frame points."""
    K = scene.K
    out = np.empty((scene.frames, points_obj.shape[0], 2))
    for t in range(scene.frames):
        Q = scene.object_in_camera(object_index, t).apply(points_obj)
        out[t, :, 0] = (K.fx * Q[:, 0] + K.cx * Q[:, 2]) / Q[:, 2]
        out[t, :, 1] = (K.fy * Q[:, 1] + K.cy * Q[:, 2]) / Q[:, 2]
    return out


# ---------------------------------------------------------------------------
# scene factories


def pixel_patch(K: CameraIntrinsics, u0: int, v0: int, u1: int, v1: int, depth: float) -> np.ndarray:
    """Fronto-parallel patch: one point per pixel centre in [u0, u1) x [v0, v1)."""
    vv, uu = np.mgrid[v0:v1, u0:u1]
    uv = np.column_stack([uu.ravel(), vv.ravel()]).astype(np.float64)
    return backproject_points(K, uv, np.full(uv.shape[0], float(depth)))


def object_scene(points: np.ndarray, poses: list, K=OBJECT_CAMERA, size=OBJECT_IMAGE_SIZE) -> SceneSpec:
    """Single object in front of a fixed camera at the origin."""
    return SceneSpec([SceneObject(points, list(poses))], [Pose.identity()] * len(poses), K, size[0], size[1])


def translation_scene(delta, frames: int = 6, depth: float = 1.0, half: int = 30, K=OBJECT_CAMERA, size=OBJECT_IMAGE_SIZE) -> SceneSpec:
    """Fronto-parallel patch translating by ``delta`` every frame."""
    cu, cv = int(K.cx), int(K.cy)
    pts = pixel_patch(K, cu - half, cv - half, cu + half, cv + half, depth)
    delta = np.asarray(delta, dtype=float)
    return object_scene(pts, [Pose.from_translation(t * delta) for t in range(frames)], K, size)


def waypoint_scene(waypoints, depth: float = 1.0, half: int = 30, K=OBJECT_CAMERA, size=OBJECT_IMAGE_SIZE) -> SceneSpec:
    """Fronto-parallel patch whose centre follows camera-frame offsets."""
    cu, cv = int(K.cx), int(K.cy)
    pts = pixel_patch(K, cu - half, cv - half, cu + half, cv + half, depth)
    poses = [Pose.from_translation(w) for w in np.asarray(waypoints, dtype=float)]
    return object_scene(pts, poses, K, size)


def pick_place_scene(lift: float = 0.15, shift: float = 0.12, depth: float = 1.0) -> SceneSpec:
    """Lift straight up, carry sideways, set down. Up is camera -y."""
    up = np.array([0.0, -1.0, 0.0])
    side = np.array([1.0, 0.0, 0.0])
    w = [np.zeros(3)]
    for k in range(1, 4):
        w.append(up * lift * k / 3)
    for k in range(1, 3):
        w.append(up * lift + side * shift * k / 2)
    for k in range(1, 4):
        w.append(up * lift * (1 - k / 3) + side * shift)
    return waypoint_scene(w, depth=depth)


def push_scene(distance: float = 0.2, depth: float = 1.0, frames: int = 9, direction=(1.0, 0.0, 0.5)) -> SceneSpec:
    """Planar slide with no vertical component."""
    d = np.asarray(direction, dtype=float)
    d[1] = 0.0
    d = d / np.linalg.norm(d) * distance
    return waypoint_scene([d * k / (frames - 1) for k in range(frames)], depth=depth)


def random_rigid_motion(rng: np.random.Generator, centre, max_angle: float = np.deg2rad(30), max_translation: float = 0.5) -> Pose:
    """Rotation about ``centre`` by at most max_angle, then a translation of at most max_translation."""
    centre = np.asarray(centre, dtype=float)
    R = random_rotation(rng, max_angle)
    t = rng.normal(size=3)
    t *= rng.uniform(0.0, max_translation) / np.linalg.norm(t)
    return Pose(R, centre - R @ centre + t)


def random_object_points(rng: np.random.Generator, n: int = 500, depth_range=(1.5, 2.5), half: float = 0.3) -> np.ndarray:
    c = np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(*depth_range)])
    return c + rng.uniform(-half, half, size=(n, 3))


def random_rigid_scene(rng: np.random.Generator, n: int = 500, **kw) -> tuple[np.ndarray, Pose, SceneSpec]:
    """Two-frame object scene with a random bounded motion; returns (points, motion, scene)."""
    pts = random_object_points(rng, n)
    T = random_rigid_motion(rng, pts.mean(axis=0), **kw)
    return pts, T, object_scene(pts, [Pose.identity(), T])


def random_camera_scene(rng: np.random.Generator, n: int = 500, **kw) -> tuple[np.ndarray, Pose, SceneSpec]:
    """Static points, camera moving by a random bounded motion; returns (points, camera motion, scene)."""
    pts = random_object_points(rng, n)
    C = random_rigid_motion(rng, np.zeros(3), **kw)
    scene = SceneSpec([SceneObject(pts, [Pose.identity(), Pose.identity()])], [Pose.identity(), C], OBJECT_CAMERA, *OBJECT_IMAGE_SIZE)
    return pts, C, scene


def write_fixture(directory, scene: SceneSpec, mask_object: int = 0, kind: str = "custom", extra: dict | None = None) -> Path:
    """Write depth/flow/mask/scene.json for every frame of ``scene``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t in range(scene.frames):
        write_depth_pgm(d / f"frame_{t:03d}.pgm", render_depth(scene, t))
    for t, f in enumerate(render_flows(scene)):
        write_flow(d / f"flow_{t:03d}.flo", f)
    write_mask_pgm(d / "mask.pgm", render_mask(scene, 0, mask_object))
    meta = scene.to_dict()
    meta["kind"] = kind
    meta["mask_object"] = mask_object
    if extra:
        meta.update(extra)
    atomic_write_bytes(d / "scene.json", json.dumps(meta, indent=1).encode())
    return d


# ---------------------------------------------------------------------------
# navigation world


def room_landmarks(rng: np.random.Generator, half_x=3.0, half_z=3.0, floor=1.0, ceiling=-1.5, spacing=0.025) -> np.ndarray:
    """Jittered grids on the four walls, floor and ceiling of a box room."""

    def grid(a0, a1, b0, b1):
        a = np.arange(a0, a1, spacing)
        b = np.arange(b0, b1, spacing)
        A, B = np.meshgrid(a, b)
        A = A.ravel() + rng.uniform(-0.4, 0.4, A.size) * spacing
        B = B.ravel() + rng.uniform(-0.4, 0.4, B.size) * spacing
        return A, B

    parts = []
    for x_wall in (-half_x, half_x):
        z, y = grid(-half_z, half_z, ceiling, floor)
        parts.append(np.column_stack([np.full(z.size, x_wall), y, z]))
    for z_wall in (-half_z, half_z):
        x, y = grid(-half_x, half_x, ceiling, floor)
        parts.append(np.column_stack([x, y, np.full(x.size, z_wall)]))
    for y_plane in (floor, ceiling):
        x, z = grid(-half_x, half_x, -half_z, half_z)
        parts.append(np.column_stack([x, np.full(x.size, y_plane), z]))
    return np.vstack(parts)


def agent_camera_pose(position, heading: float) -> Pose:
    """Camera-to-world pose; heading 0 looks along +z, positive turns left."""
    x, z = position
    return Pose(rotation_about([0.0, 1.0, 0.0], -heading), np.array([x, 0.0, z]))


def _wrap(angle: float) -> float:
    return float(np.mod(angle, 2 * np.pi))


@dataclass(frozen=True, eq=False)
class NavWorld:
    free_space: Polygon
    landmarks: np.ndarray
    position: tuple
    heading: float
    target: tuple
    step: float = NAV_STEP
    turn: float = NAV_TURN
    K: CameraIntrinsics = NAV_CAMERA
    size: tuple = NAV_IMAGE_SIZE
    previous: tuple | None = None  # (position, heading) before the last action
    ended: bool = False
    success: bool | None = None
    steps_taken: int = 0

    def camera_pose(self) -> Pose:
        return agent_camera_pose(self.position, self.heading)

    def distance_to_target(self) -> float:
        return float(np.hypot(self.position[0] - self.target[0], self.position[1] - self.target[1]))


def make_nav_world(rng: np.random.Generator, landmarks: np.ndarray | None = None, half=3.0, margin=0.5, min_distance=2.5) -> NavWorld:
    """Random start, heading and target inside a square room."""
    if landmarks is None:
        landmarks = room_landmarks(rng, half, half)
    inner = half - margin
    free = box(-inner, -inner, inner, inner)
    while True:
        start = tuple(rng.uniform(-inner, inner, 2))
        target = tuple(rng.uniform(-inner + 0.3, inner - 0.3, 2))
        if np.hypot(start[0] - target[0], start[1] - target[1]) >= min_distance:
            break
    heading = float(rng.choice(np.arange(12)) * NAV_TURN)
    return NavWorld(free, landmarks, start, heading, target)


def nav_world_step(world: NavWorld, action) -> NavWorld:
    from .nav_mapper import NavAction  # local import: nav_mapper depends on this module

    if world.ended:
        raise EpisodeEnded("episode already ended")
    action = NavAction(action)
    prev = (world.position, world.heading)
    if action is NavAction.DONE:
        return replace(world, previous=prev, ended=True, success=world.distance_to_target() <= NAV_SUCCESS_RADIUS, steps_taken=world.steps_taken + 1)
    pos, heading = world.position, world.heading
    if action is NavAction.MOVE_FORWARD:
        cand = (pos[0] - world.step * np.sin(heading), pos[1] + world.step * np.cos(heading))
        if world.free_space.covers(Point(cand)):
            pos = cand
    elif action is NavAction.ROTATE_LEFT:
        heading = _wrap(heading + world.turn)
    elif action is NavAction.ROTATE_RIGHT:
        heading = _wrap(heading - world.turn)
    return replace(world, position=pos, heading=heading, previous=prev, steps_taken=world.steps_taken + 1)


def nav_scene(world: NavWorld, poses: list) -> SceneSpec:
    """Static landmark scene seen from a list of (position, heading) agent poses."""
    cams = [agent_camera_pose(p, h) for p, h in poses]
    return SceneSpec([SceneObject(world.landmarks, [Pose.identity()] * len(cams))], cams, world.K, *world.size)


def render_nav_observation(world: NavWorld) -> tuple[DepthImage, FlowField]:
    """Depth at the previous agent pose and flow from it to the current pose."""
    if world.previous is None:
        raise NoPreviousPose("no action has been taken yet")
    scene = nav_scene(world, [world.previous, (world.position, world.heading)])
    return render_depth(scene, 0), render_flow(scene, 0, 1)


def expert_actions(world: NavWorld, goal_radius: float = 1.0, max_actions: int = 200) -> list:
    """Greedy turn-then-walk path to within ``goal_radius`` of the target, ending in Done."""
    from .nav_mapper import NavAction

    actions = []
    w = replace(world, previous=None)
    while len(actions) < max_actions:
        dx = w.target[0] - w.position[0]
        dz = w.target[1] - w.position[1]
        if np.hypot(dx, dz) <= goal_radius:
            break
        desired = np.arctan2(-dx, dz)
        err = (desired - w.heading + np.pi) % (2 * np.pi) - np.pi
        if abs(err) > w.turn / 2 + 1e-9:
            a = NavAction.ROTATE_LEFT if err > 0 else NavAction.ROTATE_RIGHT
        else:
            a = NavAction.MOVE_FORWARD
        nxt = nav_world_step(w, a)
        if a is NavAction.MOVE_FORWARD and nxt.position == w.position:
            break
        actions.append(a)
        w = nxt
    actions.append(NavAction.DONE)
    return actions


@dataclass(eq=False)
class NavVideo:
    depth0: DepthImage
    flows: list
    poses: list = field(default_factory=list)  # camera-to-world per frame


def scripted_nav_world(seed=0) -> NavWorld:
    """Agent near the back wall facing an open room, target straight ahead."""
    rng = np.random.default_rng(seed)
    w = make_nav_world(rng)
    return replace(w, position=(0.0, -1.5), heading=0.0, target=(0.0, 1.5))


def expert_scene(world: NavWorld, actions: list, frames: int = 8) -> SceneSpec:
    """Scene of ``frames`` + 1 agent poses following ``actions`` from the current pose.

    Once the action list runs out (or reaches Done) the last pose repeats,
    so trailing flows are zero.
    """
    from .nav_mapper import NavAction

    poses = [(world.position, world.heading)]
    w = replace(world, previous=None, ended=False)
    for a in actions[:frames]:
        if NavAction(a) is NavAction.DONE:
            break
        w = nav_world_step(w, a)
        poses.append((w.position, w.heading))
    while len(poses) < frames + 1:
        poses.append(poses[-1])
    return nav_scene(world, poses)


def render_expert_video(world: NavWorld, actions: list, frames: int = 8) -> NavVideo:
    scene = expert_scene(world, actions, frames)
    return NavVideo(render_depth(scene, 0), render_flows(scene), list(scene.camera_poses))
