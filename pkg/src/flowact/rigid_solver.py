"""Rigid motion from 2D tracks and a single depth map.

The per-frame objective is the pixel reprojection error

    sum_i || target_i - pi(K (R x_i + t)) ||^2

minimised with Levenberg-Marquardt over a left se(3) perturbation. Depth is
only needed for the first frame: later frames contribute 2D targets alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateGeometry, EmptyMask, NoValidDepth, ReplanNeeded, TooFewCorrespondences, TooFewPoints
from .flowio import DepthImage, FlowField, MaskImage
from .geometry import CameraIntrinsics, Pose, backproject_points, se3_exp
from .tracking import DEFAULT_NUM_POINTS, REPLAN_INLIER_FRACTION, TrackSet, chain_tracks, seed_tracks

RANSAC_TOL = 2.0
RANSAC_ITERS = 200

LM_LAMBDA0 = 1e-3
LM_MAX_ITERS = 100
LM_STEP_TOL = 1e-10
LM_DECREASE_TOL = 1e-12
_LM_LAMBDA_MAX = 1e16
# column-normalised Jacobian condition number treated as rank deficient
_DEGENERATE_COND = 1e10


@dataclass(frozen=True, eq=False)
class SolveReport:
    pose: Pose
    final_loss: float
    iterations: int
    inlier_indices: np.ndarray
    loss_trace: list = field(default_factory=list)
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_dict(),
            "final_loss": self.final_loss,
            "iterations": self.iterations,
            "inlier_indices": [int(i) for i in self.inlier_indices],
            "loss_trace": [float(x) for x in self.loss_trace],
            "converged": self.converged,
        }


# ---------------------------------------------------------------------------
# RANSAC over a 2D similarity (complex affine z -> a z + b)


def _as_complex(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    return p[:, 0] + 1j * p[:, 1]


def fit_similarity(src, dst) -> tuple[complex, complex]:
    """Least-squares 2D similarity; returns (a, b) with dst ~ a*src + b in C."""
    s, d = _as_complex(src), _as_complex(dst)
    sm, dm = s.mean(), d.mean()
    sc, dc = s - sm, d - dm
    den = np.vdot(sc, sc).real
    a = np.vdot(sc, dc) / den if den > 0 else 1.0 + 0j
    return complex(a), complex(dm - a * sm)


def ransac_inliers(src, dst, tol: float = RANSAC_TOL, iters: int = RANSAC_ITERS, seed=None, refine: bool = True) -> np.ndarray:
    """Indices of correspondences consistent with the best 2D similarity.

    Hypotheses come from random point pairs; they are ranked by inlier count,
    then summed inlier residual, then hypothesis index, so the result is a
    deterministic function of ``seed``.
    """
    s, d = _as_complex(src), _as_complex(dst)
    n = s.shape[0]
    if d.shape[0] != n:
        raise ValueError("src and dst lengths differ")
    if n < 2:
        raise TooFewCorrespondences(f"need at least 2 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=iters)
    j = rng.integers(0, n - 1, size=iters)
    j = j + (j >= i)
    ds = s[i] - s[j]
    usable = ds != 0
    a = np.where(usable, (d[i] - d[j]) / np.where(usable, ds, 1.0), 0.0)
    b = d[i] - a * s[i]
    res = np.abs(a[:, None] * s[None, :] + b[:, None] - d[None, :])
    within = res <= tol
    counts = np.where(usable, within.sum(axis=1), -1)
    cost = np.where(within, res, 0.0).sum(axis=1)
    order = np.lexsort((np.arange(iters), cost, -counts))
    best = order[0]
    inliers = within[best]
    if refine and inliers.sum() >= 2:
        # one local-optimisation pass: refit on the consensus set
        ar, br = fit_similarity(np.column_stack([s.real, s.imag])[inliers], np.column_stack([d.real, d.imag])[inliers])
        refined = np.abs(ar * s + br - d) <= tol
        if refined.sum() >= inliers.sum():
            inliers = refined
    return np.flatnonzero(inliers)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt on the reprojection loss


def _residuals(K: CameraIntrinsics, points: np.ndarray, targets: np.ndarray, pose: Pose):
    Q = pose.apply(points)
    z = Q[:, 2]
    if np.any(~(z > 0)):
        return None, Q
    r = np.empty((points.shape[0], 2))
    r[:, 0] = K.fx * Q[:, 0] / z + K.cx - targets[:, 0]
    r[:, 1] = K.fy * Q[:, 1] / z + K.cy - targets[:, 1]
    return r.reshape(-1), Q


def _jacobian(K: CameraIntrinsics, Q: np.ndarray) -> np.ndarray:
    x, y, z = Q[:, 0], Q[:, 1], Q[:, 2]
    n = Q.shape[0]
    du = np.zeros((n, 3))
    dv = np.zeros((n, 3))
    du[:, 0] = K.fx / z
    du[:, 2] = -K.fx * x / z**2
    dv[:, 1] = K.fy / z
    dv[:, 2] = -K.fy * y / z**2
    J = np.empty((n, 2, 6))
    J[:, 0, :3] = du
    J[:, 1, :3] = dv
    # d(exp(w) Q)/dw = -[Q]x, so row . (-[Q]x) = Q x row
    J[:, 0, 3:] = np.cross(Q, du)
    J[:, 1, 3:] = np.cross(Q, dv)
    return J.reshape(2 * n, 6)


def _check_geometry(points: np.ndarray) -> None:
    n = points.shape[0]
    if n < 3:
        raise TooFewPoints(f"need at least 3 points, got {n}")
    centred = points - points.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateGeometry("points are collinear or coincident")


def solve_increment(
    K: CameraIntrinsics,
    points,
    targets,
    init: Pose | None = None,
    max_iters: int = LM_MAX_ITERS,
    lambda0: float = LM_LAMBDA0,
) -> SolveReport:
    """Rigid transform best explaining ``targets`` as projections of ``points``."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    U = np.asarray(targets, dtype=float).reshape(-1, 2)
    if P.shape[0] != U.shape[0]:
        raise ValueError(f"{P.shape[0]} points but {U.shape[0]} targets")
    _check_geometry(P)
    if np.any(~(P[:, 2] > 0)):
        raise DegenerateGeometry("points must lie in front of the camera")
    pose = Pose.identity() if init is None else init
    r, Q = _residuals(K, P, U, pose)
    if r is None:
        pose = Pose.identity()
        r, Q = _residuals(K, P, U, pose)
    loss = float(r @ r)
    trace = [loss]
    lam = lambda0
    iterations = 0
    converged = False

    J = _jacobian(K, Q)
    Jn = J / np.maximum(np.linalg.norm(J, axis=0), 1e-300)
    sv = np.linalg.svd(Jn, compute_uv=False)
    if sv[-1] <= sv[0] / _DEGENERATE_COND:
        raise DegenerateGeometry(f"reprojection Jacobian is rank deficient (cond {sv[0] / max(sv[-1], 1e-300):.3g})")

    need_jacobian = False
    while iterations < max_iters:
        if loss == 0.0:
            converged = True
            break
        if need_jacobian:
            J = _jacobian(K, Q)
        g = J.T @ r
        H = J.T @ J
        iterations += 1
        try:
            step = np.linalg.solve(H + lam * np.diag(np.diag(H)), -g)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)):
            lam *= 10.0
            need_jacobian = False
            if lam > _LM_LAMBDA_MAX:
                break
            continue
        if np.linalg.norm(step) < LM_STEP_TOL:
            converged = True
            break
        cand = se3_exp(step).compose(pose)
        r_new, Q_new = _residuals(K, P, U, cand)
        loss_new = float(r_new @ r_new) if r_new is not None else np.inf
        if loss_new < loss:
            decrease = loss - loss_new
            pose, r, Q, loss = cand, r_new, Q_new, loss_new
            trace.append(loss)
            lam = max(lam * 0.1, 1e-12)
            need_jacobian = True
            if decrease < LM_DECREASE_TOL:
                converged = True
                break
        else:
            lam *= 10.0
            need_jacobian = False
            if lam > _LM_LAMBDA_MAX:
                converged = True
                break
    return SolveReport(
        pose=pose,
        final_loss=loss,
        iterations=iterations,
        inlier_indices=np.arange(P.shape[0]),
        loss_trace=trace,
        converged=converged,
    )


def robust_solve(
    K: CameraIntrinsics,
    points,
    src_pixels,
    dst_pixels,
    init: Pose | None = None,
    tol: float = RANSAC_TOL,
    iters: int = RANSAC_ITERS,
    seed=None,
) -> SolveReport:
    """RANSAC pre-filter on the 2D correspondences, then ``solve_increment``."""
    inl = ransac_inliers(src_pixels, dst_pixels, tol=tol, iters=iters, seed=seed)
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    rep = solve_increment(K, P[inl], np.asarray(dst_pixels, dtype=float)[inl], init=init)
    return replace(rep, inlier_indices=inl)


# ---------------------------------------------------------------------------
# trajectories


@dataclass(eq=False)
class TrajectoryResult:
    """Everything produced while solving a flow sequence.

    ``poses[t]`` maps frame-0 points to frame t+1; ``increments[t]`` maps
    frame t to frame t+1, so ``poses[t] = increments[t] o poses[t-1]``.
    """

    seeds: np.ndarray
    points: np.ndarray
    tracks: TrackSet
    active: np.ndarray
    poses: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": "flowact.trajectory/1",
            "num_points": int(self.seeds.shape[0]),
            "poses": [p.to_dict() for p in self.poses],
            "increments": [p.to_dict() for p in self.increments],
            "reports": [r.to_dict() for r in self.reports],
            "active_counts": [int(a.sum()) for a in self.active],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def initial_points(K: CameraIntrinsics, depth0: DepthImage, mask: MaskImage, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``n`` mask pixels with valid depth and lift them to 3D."""
    if mask.count() == 0:
        raise EmptyMask("object mask is empty")
    usable = mask.member & depth0.valid
    if not usable.any():
        raise NoValidDepth("no mask pixel has valid depth")
    seeds = seed_tracks(MaskImage(usable), n, seed=seed)
    cols, rows = seeds[:, 0].astype(int), seeds[:, 1].astype(int)
    return seeds, backproject_points(K, seeds, depth0.depth[rows, cols])


def track_and_solve(
    K: CameraIntrinsics,
    depth0: DepthImage,
    mask: MaskImage,
    flows: list[FlowField],
    seed=0,
    n_points: int = DEFAULT_NUM_POINTS,
    use_ransac: bool = True,
    ransac_tol: float = RANSAC_TOL,
    ransac_iters: int = RANSAC_ITERS,
    replan_fraction: float = REPLAN_INLIER_FRACTION,
    nearest: bool = False,
) -> TrajectoryResult:
    """Seed, chain, filter and solve every adjacent-frame increment.

    With ``use_ransac`` off only out-of-bounds tracks are dropped. Raises
    ReplanNeeded (carrying the partial result) once the surviving fraction of
    the ``n_points`` seeds falls below ``replan_fraction``.
    """
    if not flows:
        raise ValueError("need at least one flow field")
    seeds, points = initial_points(K, depth0, mask, n_points, seed)
    tracks = chain_tracks(seeds, flows, nearest=nearest)
    rng = np.random.default_rng(seed)
    active = tracks.alive[0].copy()
    result = TrajectoryResult(seeds=seeds, points=points, tracks=tracks, active=np.zeros_like(tracks.alive))
    result.active[0] = active
    cumulative = Pose.identity()
    prev_inc = Pose.identity()
    for t in range(len(flows)):
        active = active & tracks.alive[t + 1]
        idx = np.flatnonzero(active)
        if use_ransac and idx.size >= 2:
            inl = ransac_inliers(
                tracks.positions[t, idx], tracks.positions[t + 1, idx], tol=ransac_tol, iters=ransac_iters, seed=rng
            )
            active = np.zeros_like(active)
            active[idx[inl]] = True
            idx = idx[inl]
        result.active[t + 1] = active
        ratio = idx.size / n_points
        if ratio < replan_fraction:
            raise ReplanNeeded(
                f"frame {t + 1}: {idx.size} of {n_points} tracks remain ({ratio:.1%})", frame=t + 1, ratio=ratio, partial=result
            )
        rep = solve_increment(K, cumulative.apply(points[idx]), tracks.positions[t + 1, idx], init=prev_inc)
        rep = replace(rep, inlier_indices=idx)
        cumulative = rep.pose.compose(cumulative)
        prev_inc = rep.pose
        result.increments.append(rep.pose)
        result.poses.append(cumulative)
        result.reports.append(rep)
    return result


def solve_trajectory(K, depth0, mask, flows, seed=0, **kwargs) -> list[Pose]:
    """Cumulative object poses T_1..T_n relative to the first frame."""
    return track_and_solve(K, depth0, mask, flows, seed=seed, **kwargs).poses


def camera_from_scene(T: Pose) -> Pose:
    """A scene motion seen from a fixed camera equals the inverse camera motion."""
    return T.inverse()
