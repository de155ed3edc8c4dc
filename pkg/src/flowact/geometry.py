"""Pinhole camera model and SE(3) algebra.

Camera frame: +x right, +y down, +z forward. Pixel (u, v) = (column, row),
with pixel centres at integer coordinates. Units are meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NearPiRotation, NonPositiveDepth

# log() refuses rotations closer than this to pi
_PI_MARGIN = 1e-6
# compose() re-projects onto SO(3) once drift exceeds this (Frobenius norm)
_ORTHO_DRIFT = 1e-13


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise ValueError("principal point must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d) -> "CameraIntrinsics":
        if isinstance(d, (list, tuple)):
            return cls(*map(float, d))
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in Frobenius norm (polar projection)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform x -> R x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"bad pose shapes {R.shape}, {t.shape}")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "Pose":
        return cls(np.eye(3), np.asarray(t, dtype=float))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        """Transform a point (3,) or an array of points (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self o other: apply ``other`` first."""
        R = self.rotation @ other.rotation
        if np.linalg.norm(R.T @ R - np.eye(3)) > _ORTHO_DRIFT:
            R = orthonormalize(R)
        return Pose(R, self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.reshape(-1).tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Pose":
        return cls(np.asarray(d["rotation"], dtype=float).reshape(3, 3), np.asarray(d["translation"], dtype=float))

    def __repr__(self):
        w = se3_log(self) if rotation_angle(self.rotation) < np.pi - _PI_MARGIN else None
        return f"Pose(t={self.translation.tolist()}, twist={None if w is None else w.tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def pose_apply(pose: Pose, p) -> np.ndarray:
    return pose.apply(p)


# ---------------------------------------------------------------------------
# projection


def project(K: CameraIntrinsics, p) -> tuple[np.ndarray, float]:
    """Project a single camera-frame point; returns (pixel, depth)."""
    x, y, z = (float(c) for c in np.asarray(p, dtype=float).reshape(3))
    if not z > 0:
        raise NonPositiveDepth(f"point has depth {z}")
    u = (K.fx * x + K.cx * z) / z
    v = (K.fy * y + K.cy * z) / z
    return np.array([u, v]), z


def backproject(K: CameraIntrinsics, px, depth: float) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth {depth} is not positive")
    u, v = (float(c) for c in np.asarray(px, dtype=float).reshape(2))
    return np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, float(depth)])


def project_points(K: CameraIntrinsics, P: np.ndarray, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``project`` over an (N, 3) array."""
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    z = P[:, 2]
    if check and np.any(~(z > 0)):
        raise NonPositiveDepth(f"{int(np.sum(~(z > 0)))} points have non-positive depth")
    uv = np.empty((P.shape[0], 2))
    uv[:, 0] = (K.fx * P[:, 0] + K.cx * z) / z
    uv[:, 1] = (K.fy * P[:, 1] + K.cy * z) / z
    return uv, z.copy()


def backproject_points(K: CameraIntrinsics, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    d = np.asarray(depth, dtype=float).reshape(-1)
    if np.any(~(d > 0)):
        raise NonPositiveDepth(f"{int(np.sum(~(d > 0)))} pixels have non-positive depth")
    return np.column_stack([(uv[:, 0] - K.cx) * d / K.fx, (uv[:, 1] - K.cy) * d / K.fy, d])


# ---------------------------------------------------------------------------
# Lie algebra. Twists are ordered (translation part, rotation part).


def hat(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(W: np.ndarray) -> np.ndarray:
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def _so3_coeffs(theta: float) -> tuple[float, float, float]:
    """A = sin/th, B = (1-cos)/th^2, C = (th-sin)/th^3, series near zero."""
    if theta < 1e-4:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    s, c = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - c) / theta**2, (theta - s) / theta**3


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    W = hat(w)
    A, B, _ = _so3_coeffs(theta)
    return np.eye(3) + A * W + B * (W @ W)


def rotation_angle(R: np.ndarray) -> float:
    """Rotation magnitude in [0, pi], accurate at both ends of the range."""
    s = 0.5 * np.linalg.norm(vee(R - R.T))
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


def so3_log(R: np.ndarray) -> np.ndarray:
    theta = rotation_angle(R)
    if theta > np.pi - _PI_MARGIN:
        raise NearPiRotation(f"rotation angle {theta} too close to pi")
    if theta < np.pi / 2:
        A, _, _ = _so3_coeffs(theta)
        return vee(R - R.T) / (2.0 * A)
    # Large angles: axis from the symmetric part, sign from the skew part.
    B = 0.5 * (R + R.T) - np.cos(theta) * np.eye(3)
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / np.sqrt(B[i, i] * (1.0 - np.cos(theta)))
    if axis @ vee(R - R.T) < 0:
        axis = -axis
    return theta * axis / np.linalg.norm(axis)


def _left_jacobian(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    W = hat(w)
    _, B, C = _so3_coeffs(theta)
    return np.eye(3) + B * W + C * (W @ W)


def _left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    W = hat(w)
    if theta < 1e-4:
        k = 1.0 / 12.0 + theta**2 / 720.0
    else:
        k = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / theta**2
    return np.eye(3) - 0.5 * W + k * (W @ W)


def se3_exp(twist) -> Pose:
    twist = np.asarray(twist, dtype=float).reshape(6)
    v, w = twist[:3], twist[3:]
    return Pose(so3_exp(w), _left_jacobian(w) @ v)


def se3_log(pose: Pose) -> np.ndarray:
    w = so3_log(pose.rotation)
    v = _left_jacobian_inv(w) @ pose.translation
    return np.concatenate([v, w])


def rotation_error(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic distance (radians) between two rotations."""
    return rotation_angle(Ra.T @ Rb)


def pose_errors(estimate: Pose, truth: Pose) -> tuple[float, float]:
    """(geodesic rotation error in rad, translation error in m)."""
    return (
        rotation_error(estimate.rotation, truth.rotation),
        float(np.linalg.norm(estimate.translation - truth.translation)),
    )


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def rotation_about(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return so3_exp(axis / np.linalg.norm(axis) * angle)
