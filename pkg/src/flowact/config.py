"""Pipeline configuration: one JSON file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import diffusion as dif
from . import manip_planner as mp
from .errors import ConfigError, MissingInput
from .nav_mapper import NavThresholds
from .rigid_solver import RANSAC_ITERS, RANSAC_TOL
from .tracking import DEFAULT_NUM_POINTS, REPLAN_INLIER_FRACTION

_NAV = NavThresholds()

SCHEMA = "flowact.config/1"


@dataclass
class Thresholds:
    num_points: int = DEFAULT_NUM_POINTS
    lift_threshold: float = mp.LIFT_THRESHOLD
    push_standoff: float = mp.PUSH_STANDOFF
    replan_window: int = mp.REPLAN_WINDOW
    replan_min_motion: float = mp.REPLAN_MIN_MOTION
    forward_max_lateral: float = _NAV.forward_max_lateral
    done_eps: float = _NAV.done_eps
    probe_distance: float = _NAV.probe_distance
    replan_inlier_fraction: float = REPLAN_INLIER_FRACTION
    flow_mask_threshold: float = _NAV.flow_mask_threshold
    ransac_tol: float = RANSAC_TOL
    ransac_iters: int = RANSAC_ITERS
    video_frames: int = dif.DEFAULT_FRAMES
    diffusion_timesteps: int = dif.DEFAULT_TIMESTEPS
    min_snr_gamma: float = dif.MIN_SNR_GAMMA
    ema_decay: float = dif.EMA_DECAY

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not v > 0:
                raise ConfigError(f"threshold {f.name} must be positive, got {v}")
        if not self.ema_decay < 1:
            raise ConfigError("ema_decay must be below 1")


@dataclass
class PipelineConfig:
    mode: str = "manip"  # manip | nav
    flows: list = field(default_factory=list)
    depth: str | None = None
    mask: str | None = None
    output: str = "out"
    intrinsics: list = field(default_factory=lambda: [300.0, 300.0, 160.0, 120.0])
    up: list = field(default_factory=lambda: [0.0, -1.0, 0.0])
    contact_method: str = "centroid"
    use_ransac: bool = True
    seed: int = 0
    thresholds: Thresholds = field(default_factory=Thresholds)

    def validate(self, check_files: bool = True) -> None:
        if self.mode not in ("manip", "nav"):
            raise ConfigError(f"mode must be manip or nav, got {self.mode!r}")
        if len(self.intrinsics) != 4:
            raise ConfigError("intrinsics must be [fx, fy, cx, cy]")
        if self.contact_method not in ("centroid", "sample"):
            raise ConfigError(f"unknown contact method {self.contact_method!r}")
        self.thresholds.validate()
        if not check_files:
            return
        if not self.flows:
            raise ConfigError("no flow files given")
        needed = list(self.flows) + [self.depth] + ([self.mask] if self.mode == "manip" else [])
        for p in needed:
            if p is None:
                raise ConfigError(f"{self.mode} mode needs depth{' and mask' if self.mode == 'manip' else ''}")
            if not Path(p).is_file():
                raise MissingInput(f"input file not found: {p}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema"] = SCHEMA
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d.pop("schema", None)
        th = d.pop("thresholds", {}) or {}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        unknown_th = set(th) - {f.name for f in dataclasses.fields(Thresholds)}
        if unknown or unknown_th:
            raise ConfigError(f"unknown config keys: {sorted(unknown | unknown_th)}")
        return cls(thresholds=Thresholds(**th), **d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            text = Path(path).read_text()
        except FileNotFoundError:
            raise MissingInput(f"config file not found: {path}") from None
        try:
            return cls.from_dict(json.loads(text))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def with_overrides(self, **kw) -> "PipelineConfig":
        """Replace top-level fields and thresholds; None values are ignored."""
        top = {k: v for k, v in kw.items() if v is not None and k in {f.name for f in dataclasses.fields(self)}}
        th_names = {f.name for f in dataclasses.fields(Thresholds)}
        th = {k: v for k, v in kw.items() if v is not None and k in th_names}
        return dataclasses.replace(self, thresholds=dataclasses.replace(self.thresholds, **th), **top)
