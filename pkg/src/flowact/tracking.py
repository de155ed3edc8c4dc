"""Dense point tracking by chaining per-frame flow fields."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyMask
from .flowio import FlowField, MaskImage, sample_flow_many

DEFAULT_NUM_POINTS = 500
REPLAN_INLIER_FRACTION = 0.10


@dataclass(frozen=True, eq=False)
class TrackSet:
    """Pixel trajectories.

    ``positions`` has shape (frames, N, 2); ``alive`` has shape (frames, N)
    and is monotone non-increasing along the frame axis. Dead tracks hold NaN.
    """

    positions: np.ndarray
    alive: np.ndarray

    def __post_init__(self):
        for name in ("positions", "alive"):
            a = np.array(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def origins(self) -> np.ndarray:
        return self.positions[0]

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.positions.shape[1]

    def alive_count(self, frame: int) -> int:
        return int(self.alive[frame].sum())

    def to_json(self) -> str:
        """Array over tracks; each track is an array of [u, v] or null per frame."""
        tracks = []
        for i in range(len(self)):
            tracks.append(
                [
                    [float(self.positions[t, i, 0]), float(self.positions[t, i, 1])] if self.alive[t, i] else None
                    for t in range(self.frames)
                ]
            )
        return json.dumps({"schema": "flowact.trackset/1", "tracks": tracks})

    @classmethod
    def from_json(cls, text: str) -> "TrackSet":
        tracks = json.loads(text)["tracks"]
        n = len(tracks)
        frames = len(tracks[0]) if n else 0
        pos = np.full((frames, n, 2), np.nan)
        alive = np.zeros((frames, n), dtype=bool)
        for i, tr in enumerate(tracks):
            for t, p in enumerate(tr):
                if p is not None:
                    pos[t, i] = p
                    alive[t, i] = True
        return cls(pos, alive)


def seed_tracks(mask: MaskImage, n: int = DEFAULT_NUM_POINTS, seed=None) -> np.ndarray:
    """Draw ``n`` member pixels uniformly; without replacement when possible."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    members = mask.pixels()
    if members.shape[0] == 0:
        raise EmptyMask("mask has no members")
    rng = np.random.default_rng(seed)
    replace = members.shape[0] < n
    idx = rng.choice(members.shape[0], size=n, replace=replace)
    return members[idx]


def chain_tracks(seeds, flows: list[FlowField], nearest: bool = False) -> TrackSet:
    """Integrate flows from the seed pixels; tracks die on leaving the image."""
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 2)
    if flows:
        shape = flows[0].shape
        for k, f in enumerate(flows):
            if f.shape != shape:
                raise DimensionMismatch(f"flow {k} is {f.width}x{f.height}, flow 0 is {shape[1]}x{shape[0]}")
        H, W = shape
        inside = (seeds[:, 0] >= 0) & (seeds[:, 0] <= W - 1) & (seeds[:, 1] >= 0) & (seeds[:, 1] <= H - 1)
    else:
        inside = np.ones(seeds.shape[0], dtype=bool)
    T = len(flows) + 1
    pos = np.full((T, seeds.shape[0], 2), np.nan)
    alive = np.zeros((T, seeds.shape[0]), dtype=bool)
    pos[0] = seeds
    alive[0] = inside
    pos[0, ~inside] = np.nan
    for t, flow in enumerate(flows):
        live = np.flatnonzero(alive[t])
        d, ok = sample_flow_many(flow, pos[t, live], nearest=nearest)
        nxt = pos[t, live] + d
        H, W = flow.shape
        ok &= (nxt[:, 0] >= 0) & (nxt[:, 0] <= W - 1) & (nxt[:, 1] >= 0) & (nxt[:, 1] <= H - 1)
        keep = live[ok]
        pos[t + 1, keep] = nxt[ok]
        alive[t + 1, keep] = True
    return TrackSet(pos, alive)


def inlier_ratio(ts_or_count, frame: int | None = None, initial_count: int = DEFAULT_NUM_POINTS) -> float:
    """Alive-at-frame over the number originally sampled.

    Accepts either a TrackSet plus frame index, or a bare alive count.
    """
    if initial_count < 1:
        raise ValueError("initial_count must be >= 1")
    if isinstance(ts_or_count, TrackSet):
        alive = ts_or_count.alive_count(-1 if frame is None else frame)
    else:
        alive = int(ts_or_count)
    return alive / initial_count


def needs_replan(ratio: float, threshold: float = REPLAN_INLIER_FRACTION) -> bool:
    return ratio < threshold
