"""Flow, depth and mask images: containers, file formats, sampling.

File formats
------------
``.flo``  Middlebury layout, little-endian: float32 magic 202021.25, int32
          width, int32 height, then row-major interleaved float32 (u, v).
          Components with magnitude above 1e9 mark unknown flow.
``.pgm``  binary P5. Depth: maxval 65535, big-endian samples in millimeters,
          0 = invalid. Mask: maxval 255, nonzero = member.
"""

from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadImageFile, BadMagic, DimensionMismatch, NonPositiveDims, OutOfBounds, TruncatedFile

FLO_MAGIC = 202021.25
UNKNOWN_FLOW_THRESH = 1e9
_HEADER = np.dtype([("magic", "<f4"), ("width", "<i4"), ("height", "<i4")])


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement, ``data[row, col] = (du, dv)`` in pixels."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3 or d.shape[2] != 2:
            raise ValueError(f"flow data must be (H, W, 2), got {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise NonPositiveDims(f"flow has shape {d.shape}")
        if d.dtype != np.float32:
            d = d.astype(np.float32)
        d = d.copy() if d.flags.writeable else d
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width, 2), np.float32))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def valid(self) -> np.ndarray:
        d = self.data
        return np.isfinite(d).all(axis=2) & (np.abs(d) <= UNKNOWN_FLOW_THRESH).all(axis=2)

    def magnitude(self) -> np.ndarray:
        d = self.data.astype(np.float64)
        return np.hypot(d[..., 0], d[..., 1])


@dataclass(frozen=True, eq=False)
class DepthImage:
    depth: np.ndarray

    def __post_init__(self):
        d = np.array(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth must be 2-D, got {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise NonPositiveDims(f"depth has shape {d.shape}")
        d[~(d > 0)] = 0.0
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass(frozen=True, eq=False)
class MaskImage:
    member: np.ndarray

    def __post_init__(self):
        m = np.array(self.member, dtype=bool)
        if m.ndim != 2:
            raise ValueError(f"mask must be 2-D, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "member", m)

    @property
    def width(self) -> int:
        return self.member.shape[1]

    @property
    def height(self) -> int:
        return self.member.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.member.shape

    def count(self) -> int:
        return int(self.member.sum())

    def pixels(self) -> np.ndarray:
        """Member pixels as (u, v) rows in row-major order."""
        rows, cols = np.nonzero(self.member)
        return np.column_stack([cols, rows]).astype(np.float64)


def check_same_shape(a, b, name_a: str = "first input", name_b: str = "second input") -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise DimensionMismatch(
            f"dimension mismatch: {name_a} is {a.shape[1]}x{a.shape[0]} but {name_b} is {b.shape[1]}x{b.shape[0]}"
        )


# ---------------------------------------------------------------------------
# atomic writes


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# .flo


def encode_flow(flow: FlowField) -> bytes:
    header = np.array([(FLO_MAGIC, flow.width, flow.height)], dtype=_HEADER)
    return header.tobytes() + flow.data.astype("<f4", copy=False).tobytes()


def decode_flow(buf: bytes, name: str = "<buffer>") -> FlowField:
    if len(buf) < 4:
        raise TruncatedFile(f"{name}: {len(buf)} bytes, too short for a header")
    magic = np.frombuffer(buf, "<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise BadMagic(f"{name}: magic {magic!r} != {FLO_MAGIC}")
    if len(buf) < _HEADER.itemsize:
        raise TruncatedFile(f"{name}: header truncated")
    h = np.frombuffer(buf, _HEADER, count=1)[0]
    width, height = int(h["width"]), int(h["height"])
    if width <= 0 or height <= 0:
        raise NonPositiveDims(f"{name}: dimensions {width}x{height}")
    need = _HEADER.itemsize + 8 * width * height
    if len(buf) < need:
        raise TruncatedFile(f"{name}: expected {need} bytes, found {len(buf)}")
    data = np.frombuffer(buf, "<f4", count=2 * width * height, offset=_HEADER.itemsize)
    return FlowField(data.reshape(height, width, 2).astype(np.float32))


def write_flow(path, flow: FlowField) -> None:
    atomic_write_bytes(path, encode_flow(flow))


def read_flow(path) -> FlowField:
    return decode_flow(Path(path).read_bytes(), name=str(path))


# ---------------------------------------------------------------------------
# .pgm

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def _parse_pgm(buf: bytes, name: str) -> tuple[np.ndarray, int]:
    tokens = []
    pos = 0
    for _ in range(4):
        m = _PGM_TOKEN.match(buf, pos)
        if m is None:
            raise BadImageFile(f"{name}: malformed PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise BadMagic(f"{name}: expected P5 PGM, found {tokens[0][:8]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise BadImageFile(f"{name}: malformed PGM header") from exc
    if width <= 0 or height <= 0:
        raise NonPositiveDims(f"{name}: dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise BadImageFile(f"{name}: maxval {maxval} out of range")
    pos += 1  # single whitespace byte ends the header
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(buf) - pos < need:
        raise TruncatedFile(f"{name}: expected {need} pixel bytes, found {len(buf) - pos}")
    return np.frombuffer(buf, dtype, count=width * height, offset=pos).reshape(height, width), maxval


def encode_pgm(values: np.ndarray, maxval: int) -> bytes:
    h, w = values.shape
    dtype = ">u2" if maxval > 255 else "u1"
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + np.ascontiguousarray(values, dtype=dtype).tobytes()


def depth_to_millimeters(depth: DepthImage) -> np.ndarray:
    mm = np.rint(depth.depth * 1000.0)
    if mm.max(initial=0) > 65535:
        raise ValueError("depth exceeds 65.535 m, not representable in 16-bit millimeters")
    return mm.astype(np.uint16)


def write_depth_pgm(path, depth: DepthImage) -> None:
    atomic_write_bytes(path, encode_pgm(depth_to_millimeters(depth), 65535))


def read_depth_pgm(path) -> DepthImage:
    values, maxval = _parse_pgm(Path(path).read_bytes(), str(path))
    if maxval <= 255:
        raise BadImageFile(f"{path}: depth PGM must be 16-bit (maxval {maxval})")
    return DepthImage(values.astype(np.float64) / 1000.0)


def write_mask_pgm(path, mask: MaskImage) -> None:
    atomic_write_bytes(path, encode_pgm(mask.member.astype(np.uint8) * 255, 255))


def read_mask_pgm(path) -> MaskImage:
    values, _ = _parse_pgm(Path(path).read_bytes(), str(path))
    return MaskImage(values != 0)


def read_paired(flow_paths, depth_path, mask_path=None):
    """Read flows, depth and an optional mask, rejecting any size mismatch."""
    flows = [read_flow(p) for p in flow_paths]
    depth = read_depth_pgm(depth_path)
    for p, f in zip(flow_paths, flows):
        check_same_shape(f, depth, str(p), str(depth_path))
    mask = None
    if mask_path is not None:
        mask = read_mask_pgm(mask_path)
        check_same_shape(mask, depth, str(mask_path), str(depth_path))
    return flows, depth, mask


# ---------------------------------------------------------------------------
# sampling


def sample_flow(flow: FlowField, px, nearest: bool = False) -> tuple[float, float]:
    """Flow at a subpixel location; bilinear unless ``nearest``."""
    u, v = (float(c) for c in np.asarray(px, dtype=float).reshape(2))
    if not (0.0 <= u <= flow.width - 1 and 0.0 <= v <= flow.height - 1):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {flow.width}x{flow.height} flow")
    values, _ = sample_flow_many(flow, np.array([[u, v]]), nearest=nearest)
    return float(values[0, 0]), float(values[0, 1])


def sample_flow_many(flow: FlowField, pts: np.ndarray, nearest: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised sampler. Returns (values (N, 2), ok (N,)).

    ``ok`` is false where the point is out of bounds or any contributing
    cell holds unknown flow; values there are NaN.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    H, W = flow.shape
    u, v = pts[:, 0], pts[:, 1]
    ok = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    out = np.full((pts.shape[0], 2), np.nan)
    if not ok.any():
        return out, ok
    data = flow.data.astype(np.float64)
    valid = flow.valid()
    uu, vv = u[ok], v[ok]
    if nearest:
        c = np.floor(uu + 0.5).astype(int)
        r = np.floor(vv + 0.5).astype(int)
        vals = data[r, c]
        good = valid[r, c]
    else:
        c0 = np.minimum(np.floor(uu).astype(int), W - 1)
        r0 = np.minimum(np.floor(vv).astype(int), H - 1)
        c1 = np.minimum(c0 + 1, W - 1)
        r1 = np.minimum(r0 + 1, H - 1)
        a = uu - c0
        b = vv - r0
        cells = [(r0, c0, (1 - a) * (1 - b)), (r0, c1, a * (1 - b)), (r1, c0, (1 - a) * b), (r1, c1, a * b)]
        vals = np.zeros((uu.shape[0], 2))
        good = np.ones(uu.shape[0], dtype=bool)
        for r, c, w in cells:
            cell_ok = valid[r, c]
            good &= cell_ok | (w == 0)
            vals += w[:, None] * np.where(cell_ok[:, None], data[r, c], 0.0)
    idx = np.flatnonzero(ok)
    out[idx] = np.where(good[:, None], vals, np.nan)
    ok[idx] = good
    return out, ok


def scene_mask_from_flow(flow: FlowField, threshold: float = 1.0) -> MaskImage:
    """Pixels whose flow magnitude strictly exceeds ``threshold``."""
    return MaskImage((flow.magnitude() > threshold) & flow.valid())
