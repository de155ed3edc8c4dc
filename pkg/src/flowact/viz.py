"""Dependency-free visualisation: binary PPM images and an SVG quiver.

Output bytes depend only on the inputs, so renders are reproducible.
"""

from __future__ import annotations

import numpy as np

from .flowio import DepthImage, FlowField, atomic_write_bytes
from .geometry import CameraIntrinsics

CURRENT_COLOR = (255, 0, 0)
NEXT_COLOR = (0, 200, 255)
QUIVER_COLOR = (255, 220, 0)
LEGEND_ORIGIN = (2, 2)  # (u, v) of the top-left swatch
_SWATCH = 6


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


def write_ppm(path, rgb: np.ndarray) -> None:
    atomic_write_bytes(path, encode_ppm(rgb))


def depth_background(depth: DepthImage) -> np.ndarray:
    """Near is bright, far is dark, invalid is black."""
    d = depth.depth
    out = np.zeros(d.shape + (3,), dtype=np.uint8)
    valid = depth.valid
    if valid.any():
        lo, hi = d[valid].min(), d[valid].max()
        g = np.ones_like(d) if hi == lo else (hi - d) / (hi - lo)
        out[valid] = (60 + 195 * g[valid]).round().astype(np.uint8)[:, None]
    return out


def _put(img, u, v, color):
    h, w, _ = img.shape
    u = np.asarray(u)
    v = np.asarray(v)
    ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    img[v[ok], u[ok]] = color


def draw_line(img: np.ndarray, p0, p1, color) -> None:
    n = int(np.ceil(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1])))) + 1
    u = np.floor(np.linspace(p0[0], p1[0], n) + 0.5).astype(int)
    v = np.floor(np.linspace(p0[1], p1[1], n) + 0.5).astype(int)
    _put(img, u, v, color)


def draw_square(img: np.ndarray, centre, half: int, color) -> None:
    cu, cv = (int(np.floor(c + 0.5)) for c in centre)
    vv, uu = np.mgrid[cv - half : cv + half + 1, cu - half : cu + half + 1]
    _put(img, uu.ravel(), vv.ravel(), color)


def draw_legend(img: np.ndarray) -> None:
    u0, v0 = LEGEND_ORIGIN
    for i, c in enumerate((CURRENT_COLOR, NEXT_COLOR, QUIVER_COLOR)):
        u = u0 + i * (_SWATCH + 2)
        vv, uu = np.mgrid[v0 : v0 + _SWATCH, u : u + _SWATCH]
        _put(img, uu.ravel(), vv.ravel(), c)


def quiver_samples(flow: FlowField, step: int = 8) -> list[tuple[float, float, float, float]]:
    """(u, v, du, dv) on a decimated grid, skipping invalid and zero vectors."""
    out = []
    valid = flow.valid()
    for v in range(step // 2, flow.height, step):
        for u in range(step // 2, flow.width, step):
            du, dv = (float(x) for x in flow.data[v, u])
            if valid[v, u] and (du or dv):
                out.append((u, v, du, dv))
    return out


def project_markers(K: CameraIntrinsics, points) -> list:
    """Pixel positions of camera-frame points; points behind the camera map to None."""
    out = []
    for p in points:
        x, y, z = (float(c) for c in p)
        out.append(None if z <= 0 else ((K.fx * x + K.cx * z) / z, (K.fy * y + K.cy * z) / z))
    return out


def render_plan_image(
    depth: DepthImage,
    K: CameraIntrinsics,
    subgoals=(),
    current: int = 0,
    flow: FlowField | None = None,
    quiver_step: int = 8,
    quiver_scale: float = 1.0,
) -> np.ndarray:
    """Depth background, optional flow quiver, then subgoal markers:
    the current subgoal in red and later ones in cyan."""
    img = depth_background(depth)
    if flow is not None:
        for u, v, du, dv in quiver_samples(flow, quiver_step):
            draw_line(img, (u, v), (u + quiver_scale * du, v + quiver_scale * dv), QUIVER_COLOR)
    px = project_markers(K, subgoals)
    for i, p in enumerate(px):
        if p is not None and i > current:
            draw_square(img, p, 1, NEXT_COLOR)
    if current < len(px) and px[current] is not None:
        draw_square(img, px[current], 2, CURRENT_COLOR)
    draw_legend(img)
    return img


def quiver_svg(flow: FlowField, step: int = 8, scale: float = 1.0) -> str:
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{flow.width}" height="{flow.height}" '
        f'viewBox="0 0 {flow.width} {flow.height}">'
    ]
    for u, v, du, dv in quiver_samples(flow, step):
        lines.append(f'<line x1="{u}" y1="{v}" x2="{u + scale * du:.3f}" y2="{v + scale * dv:.3f}" stroke="black" stroke-width="0.5"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
