"""Single-camera localization from (3D, 2D) correspondences.

A direct linear transform over six or more correspondences initializes the
pose; Levenberg-Marquardt with axis-angle increments then minimizes the total
squared reprojection error. Correspondences come from hand-clicked marker
pixels paired with mocap marker positions, so the solve is over-determined
and no RANSAC runs by default; an optional outlier pass drops points with
residual above three times the median and re-solves once.
"""

from __future__ import annotations

from collections import namedtuple
from typing import Sequence

import numpy as np

from .errors import DegenerateConfiguration, Divergence, InsufficientPoints
from .geometry import (
    DEPTH_EPS,
    CameraIntrinsics,
    CameraPose,
    axis_angle_rotation,
    project_jacobian,
    project_points,
    remove_distortion,
)
from .sessionio import Correspondence

__all__ = ["Correspondence", "solve_pnp", "refine_pose", "reprojection_cost"]

MIN_POINTS_DLT = 6
MIN_POINTS_REFINE = 3
COPLANARITY_TOL = 1e-6
DLT_CONDITION_LIMIT = 1e12
LM_MAX_ITERS = 100
LM_LAMBDA_MAX = 1e12

_RawPose = namedtuple("_RawPose", ["rotation", "position"])


def _normalized_points(pixels: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pixels to undistorted normalized image coordinates (analytic K⁻¹)."""
    y = (pixels[:, 1] - intr.cy) / intr.fy
    x = (pixels[:, 0] - intr.cx - intr.skew * y) / intr.fx
    return remove_distortion(np.stack([x, y], axis=1), intr.dist)


def _dlt(world: np.ndarray, norm: np.ndarray) -> CameraPose:
    """Direct linear transform for the world-to-camera projection [R|t]."""
    centered = world - world.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 0 or sv[2] / sv[0] < COPLANARITY_TOL:
        raise DegenerateConfiguration("correspondences are coplanar or collinear")

    centroid = world.mean(axis=0)
    scale = np.sqrt(3.0) / np.sqrt(np.mean(np.sum(centered**2, axis=1)))
    Xn = centered * scale
    Xh = np.hstack([Xn, np.ones((len(Xn), 1))])

    n = len(world)
    A = np.zeros((2 * n, 12))
    x, y = norm[:, 0], norm[:, 1]
    A[0::2, 4:8] = -Xh
    A[0::2, 8:12] = y[:, None] * Xh
    A[1::2, 0:4] = Xh
    A[1::2, 8:12] = -x[:, None] * Xh

    _u, s, vt = np.linalg.svd(A)
    if s[10] <= 0 or s[0] / s[10] > DLT_CONDITION_LIMIT:
        raise DegenerateConfiguration(
            f"ill-conditioned correspondence set (condition {s[0] / max(s[10], 1e-300):.3e})"
        )
    P = vt[-1].reshape(3, 4)
    # undo the 3D normalization: X_normalized = scale·(X − centroid)
    T = np.eye(4)
    T[:3, :3] *= scale
    T[:3, 3] = -scale * centroid
    P = P @ T

    P /= np.linalg.norm(P[2, :3])
    depths = P[2, :3] @ world.T + P[2, 3]
    if np.median(depths) < 0:
        P = -P
    M = P[:, :3]
    U, sig, Vt = np.linalg.svd(M)
    d = np.linalg.det(U @ Vt)
    R_w2c = U @ np.diag([1.0, 1.0, d]) @ Vt
    t_w2c = P[:, 3] * (3.0 / np.sum(sig))
    return CameraPose(rotation=R_w2c.T, position=-R_w2c.T @ t_w2c)


def reprojection_cost(pose, world: np.ndarray, pixels: np.ndarray, intr: CameraIntrinsics) -> float:
    """Total squared pixel reprojection error; inf if any point is behind."""
    pred, z = project_points(world, intr, pose)
    if np.any(z <= DEPTH_EPS):
        return float("inf")
    return float(np.sum((pixels - pred) ** 2))


def _lm_pose(
    pose: CameraPose,
    world: np.ndarray,
    pixels: np.ndarray,
    intr: CameraIntrinsics,
    max_iters: int = LM_MAX_ITERS,
):
    """Pose-only LM; returns (pose, cost_history). Steps are accepted only
    when they strictly reduce the cost, so the history is decreasing."""
    R = np.array(pose.rotation)
    t = np.array(pose.position)
    lam = 1e-3
    cost = reprojection_cost(_RawPose(R, t), world, pixels, intr)
    if not np.isfinite(cost):
        raise Divergence("initial pose puts correspondences behind the camera")
    history = [cost]
    reduced = False

    for _ in range(max_iters):
        pix, z, dpix_dxc, dxc_drot, dxc_dpos = project_jacobian(world, intr, _RawPose(R, t))
        r = (pixels - pix).reshape(-1)
        Jrot = -np.einsum("nij,njk->nik", dpix_dxc, dxc_drot)
        Jpos = -np.einsum("nij,jk->nik", dpix_dxc, dxc_dpos)
        J = np.concatenate([Jrot, Jpos], axis=2).reshape(-1, 6)
        g = J.T @ r
        if np.max(np.abs(g)) < 1e-12 or cost < 1e-24:
            return CameraPose(rotation=_orthonormalize(R), position=t), history
        H = J.T @ J
        diag = np.diag(H).copy()
        diag[diag <= 0] = 1.0

        stepped = False
        while lam <= LM_LAMBDA_MAX:
            try:
                delta = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            R_new = R @ axis_angle_rotation(delta[:3])
            t_new = t + delta[3:]
            new_cost = reprojection_cost(_RawPose(R_new, t_new), world, pixels, intr)
            if new_cost < cost:
                R, t = R_new, t_new
                rel = (cost - new_cost) / max(cost, 1e-30)
                cost = new_cost
                history.append(cost)
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                reduced = True
                if rel < 1e-12:
                    return CameraPose(rotation=_orthonormalize(R), position=t), history
                break
            lam *= 10.0
        if not stepped:
            if reduced or cost < 1e-18:
                return CameraPose(rotation=_orthonormalize(R), position=t), history
            raise Divergence("LM could not reduce the reprojection cost")
    if not reduced:
        raise Divergence(f"LM failed to reduce cost in {max_iters} iterations")
    return CameraPose(rotation=_orthonormalize(R), position=t), history


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _s, Vt = np.linalg.svd(R)
    return U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt


def _mean_pixel_residual(pose: CameraPose, world, pixels, intr) -> float:
    pred, _z = project_points(world, intr, pose)
    return float(np.mean(np.linalg.norm(pixels - pred, axis=1)))


def solve_pnp(
    correspondences: Sequence[Correspondence],
    intr: CameraIntrinsics,
    reject_outliers: bool = False,
) -> tuple[CameraPose, float]:
    """Camera pose from six or more correspondences.

    DLT initialization followed by LM refinement. Returns the pose and the
    mean Euclidean pixel residual over the (kept) correspondences.
    """
    if len(correspondences) < MIN_POINTS_DLT:
        raise InsufficientPoints(
            f"PnP needs at least {MIN_POINTS_DLT} correspondences, got {len(correspondences)}"
        )
    world = np.stack([c.world for c in correspondences])
    pixels = np.stack([c.image for c in correspondences])
    norm = _normalized_points(pixels, intr)
    pose = _dlt(world, norm)
    pose, _hist = _lm_pose(pose, world, pixels, intr)

    if reject_outliers:
        pred, _z = project_points(world, intr, pose)
        res = np.linalg.norm(pixels - pred, axis=1)
        med = np.median(res)
        keep = res <= 3.0 * med if med > 0 else np.ones(len(res), dtype=bool)
        if keep.sum() >= MIN_POINTS_DLT and keep.sum() < len(res):
            world, pixels = world[keep], pixels[keep]
            pose, _hist = _lm_pose(pose, world, pixels, intr)

    return pose, _mean_pixel_residual(pose, world, pixels, intr)


def refine_pose(
    initial: CameraPose,
    correspondences: Sequence[Correspondence],
    intr: CameraIntrinsics,
) -> CameraPose:
    """LM polish of an existing pose; final cost never exceeds the initial."""
    if len(correspondences) < MIN_POINTS_REFINE:
        raise InsufficientPoints(
            f"refinement needs at least {MIN_POINTS_REFINE} correspondences, got {len(correspondences)}"
        )
    world = np.stack([c.world for c in correspondences])
    pixels = np.stack([c.image for c in correspondences])
    pose, _hist = _lm_pose(initial, world, pixels, intr)
    return pose
