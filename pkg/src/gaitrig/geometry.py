"""Pinhole camera model: value types, projection, rays, viewing-angle extrinsics.

Conventions used everywhere in this package:

* World frame: right-handed, z up, meters.
* ``CameraPose.rotation`` is the camera's orientation in the world frame
  (camera-to-world); ``CameraPose.position`` is the camera center in world
  coordinates. A world point X maps to camera coordinates as
  ``x_cam = Rᵀ (X − position)``.
* Pixels: origin at the image top-left corner, u rightward, v downward.
* Projection: ``pixel = K · distort(x_cam / z)``, i.e. lens distortion is
  applied to normalized image coordinates before the intrinsic matrix.
* Distortion: Brown-Conrady, coefficient order (k1, k2, p1, p2[, k3]);
  an empty list means no distortion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PointBehindCamera, UnsupportedModel, ZeroPosition

DEPTH_EPS = 1e-9
ORTHONORMAL_TOL = 1e-9
UNDISTORT_ITERS = 10
UNDISTORT_TOL = 1e-10


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths, principal point, skew, distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0
    dist: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        vals = (self.fx, self.fy, self.cx, self.cy, self.skew, *self.dist)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("intrinsic parameters must be finite")
        if len(self.dist) not in (0, 4, 5):
            raise UnsupportedModel(
                f"distortion list must have length 0, 4 or 5, got {len(self.dist)}"
            )
        object.__setattr__(self, "dist", tuple(float(d) for d in self.dist))

    def matrix(self) -> np.ndarray:
        """3x3 upper-triangular K with K[2][2] = 1."""
        return np.array(
            [
                [self.fx, self.skew, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class CameraPose:
    """Camera extrinsics: world orientation (camera-to-world) and world position."""

    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.position, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"rotation is not orthonormal (max |RᵀR − I| = {err:.3e})")
        det = np.linalg.det(R)
        if abs(det - 1.0) > ORTHONORMAL_TOL:
            raise ValueError(f"rotation determinant {det} is not +1")
        object.__setattr__(self, "rotation", _freeze(R))
        object.__setattr__(self, "position", _freeze(t))


@dataclass(frozen=True)
class Ray:
    """Half-infinite ray ``origin + w * direction``; direction need not be unit."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        if not (np.all(np.isfinite(o)) and np.all(np.isfinite(d))):
            raise ValueError("ray entries must be finite")
        if np.linalg.norm(d) == 0.0:
            raise ValueError("ray direction must be nonzero")
        object.__setattr__(self, "origin", _freeze(o))
        object.__setattr__(self, "direction", _freeze(d))


@dataclass(frozen=True)
class SphericalExtrinsic:
    """Elevation/azimuth viewing angles of a camera at ``position``."""

    theta_e: float
    theta_a: float
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (math.isfinite(self.theta_e) and math.isfinite(self.theta_a)):
            raise ValueError("angles must be finite")
        object.__setattr__(self, "position", _freeze(np.asarray(self.position, dtype=float).reshape(3)))


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle_rotation(w) -> np.ndarray:
    """Rodrigues exponential map of an axis-angle 3-vector."""
    w = np.asarray(w, dtype=float).reshape(3)
    theta = np.linalg.norm(w)
    K = np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )
    if theta < 1e-10:
        # second-order series keeps orthonormality within tolerance near zero
        return np.eye(3) + K + 0.5 * (K @ K)
    return np.eye(3) + (math.sin(theta) / theta) * K + ((1.0 - math.cos(theta)) / theta**2) * (K @ K)


def rotation_angle_between(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic distance on SO(3) between two rotation matrices, radians."""
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def apply_distortion(n: np.ndarray, dist: tuple[float, ...]) -> np.ndarray:
    """Forward Brown-Conrady distortion of normalized image points.

    Args:
        n: normalized coordinates, shape (..., 2).
        dist: () for identity, (k1, k2, p1, p2) or (k1, k2, p1, p2, k3).

    Returns:
        Distorted normalized coordinates, same shape.
    """
    n = np.asarray(n, dtype=float)
    if len(dist) == 0:
        return n.copy()
    if len(dist) not in (4, 5):
        raise UnsupportedModel(f"distortion list must have length 0, 4 or 5, got {len(dist)}")
    k1, k2, p1, p2 = dist[:4]
    k3 = dist[4] if len(dist) == 5 else 0.0
    x, y = n[..., 0], n[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def remove_distortion(nd: np.ndarray, dist: tuple[float, ...]) -> np.ndarray:
    """Invert apply_distortion by fixed-point iteration (10 iters, tol 1e-10)."""
    nd = np.asarray(nd, dtype=float)
    if len(dist) == 0:
        return nd.copy()
    n = nd.copy()
    for _ in range(UNDISTORT_ITERS):
        d = apply_distortion(n, dist)
        delta = nd - d
        n = n + delta
        if np.max(np.abs(delta)) < UNDISTORT_TOL:
            break
    return n


def _distortion_jacobian(n: np.ndarray, dist: tuple[float, ...]) -> np.ndarray:
    """d(distorted)/d(normalized), shape (..., 2, 2)."""
    n = np.asarray(n, dtype=float)
    out = np.zeros(n.shape[:-1] + (2, 2))
    if len(dist) == 0:
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        return out
    k1, k2, p1, p2 = dist[:4]
    k3 = dist[4] if len(dist) == 5 else 0.0
    x, y = n[..., 0], n[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    dr = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)
    out[..., 0, 0] = radial + 2.0 * x * x * dr + 2.0 * p1 * y + 6.0 * p2 * x
    out[..., 0, 1] = 2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y
    out[..., 1, 0] = out[..., 0, 1]
    out[..., 1, 1] = radial + 2.0 * y * y * dr + 6.0 * p1 * y + 2.0 * p2 * x
    return out


def project_points(points: np.ndarray, intr: CameraIntrinsics, pose: CameraPose):
    """Project world points into the image.

    Args:
        points: shape (N, 3) world coordinates.

    Returns:
        (pixels (N, 2), depths (N,)): depths are camera-frame z. Points at or
        behind the depth epsilon get non-usable pixel values; callers must
        check ``depths > DEPTH_EPS``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    xc = (points - pose.position) @ pose.rotation  # row-vector form of Rᵀ(X − t)
    depths = xc[:, 2]
    safe = np.where(np.abs(depths) > DEPTH_EPS, depths, 1.0)
    n = xc[:, :2] / safe[:, None]
    d = apply_distortion(n, intr.dist)
    u = intr.fx * d[:, 0] + intr.skew * d[:, 1] + intr.cx
    v = intr.fy * d[:, 1] + intr.cy
    return np.stack([u, v], axis=1), depths


def project(p3d, intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Project one world point; raises PointBehindCamera for depth <= 1e-9 m."""
    pixels, depths = project_points(np.asarray(p3d, dtype=float).reshape(1, 3), intr, pose)
    if depths[0] <= DEPTH_EPS:
        raise PointBehindCamera(f"camera-frame depth {depths[0]:.3e} m is not in front of the camera")
    return pixels[0]


def project_jacobian(points: np.ndarray, intr: CameraIntrinsics, pose: CameraPose):
    """Pixels plus analytic derivatives of the projection.

    Returns:
        pixels (N, 2), depths (N,),
        d_pix/d_xcam (N, 2, 3) with xcam the camera-frame point,
        d_xcam/d_rot (N, 3, 3) for a right-multiplied axis-angle increment
        (R ← R·exp([ω]×)),
        d_xcam/d_pos (3, 3) = −Rᵀ (shared by all points); d_xcam/d_point = +Rᵀ.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    R = pose.rotation
    xc = (points - pose.position) @ R
    z = xc[:, 2]
    safe = np.where(np.abs(z) > DEPTH_EPS, z, 1.0)
    n = xc[:, :2] / safe[:, None]

    dn_dxc = np.zeros((len(points), 2, 3))
    inv_z = 1.0 / safe
    dn_dxc[:, 0, 0] = inv_z
    dn_dxc[:, 1, 1] = inv_z
    dn_dxc[:, 0, 2] = -n[:, 0] * inv_z
    dn_dxc[:, 1, 2] = -n[:, 1] * inv_z

    d = apply_distortion(n, intr.dist)
    dd_dn = _distortion_jacobian(n, intr.dist)
    A = np.array([[intr.fx, intr.skew], [0.0, intr.fy]])
    u = intr.fx * d[:, 0] + intr.skew * d[:, 1] + intr.cx
    v = intr.fy * d[:, 1] + intr.cy
    pixels = np.stack([u, v], axis=1)
    dpix_dxc = np.einsum("ij,njk,nkl->nil", A, dd_dn, dn_dxc)

    # xc = exp(−[ω]×) Rᵀ (X − t − δt): d xc/dω = [xc]×, d xc/dδt = −Rᵀ
    dxc_drot = np.zeros((len(points), 3, 3))
    dxc_drot[:, 0, 1] = -xc[:, 2]
    dxc_drot[:, 0, 2] = xc[:, 1]
    dxc_drot[:, 1, 0] = xc[:, 2]
    dxc_drot[:, 1, 2] = -xc[:, 0]
    dxc_drot[:, 2, 0] = -xc[:, 1]
    dxc_drot[:, 2, 1] = xc[:, 0]

    return pixels, z, dpix_dxc, dxc_drot, -R.T


def pixel_ray(p, intr: CameraIntrinsics, pose: CameraPose) -> Ray:
    """Back-project a pixel to its world-frame viewing ray.

    The pixel is undistorted first (when the camera has distortion), then the
    direction is R·K⁻¹·(u, v, 1) and the origin is the camera position.
    """
    p = np.asarray(p, dtype=float).reshape(2)
    # analytic K⁻¹ of the upper-triangular intrinsic matrix
    y = (p[1] - intr.cy) / intr.fy
    x = (p[0] - intr.cx - intr.skew * y) / intr.fx
    n = remove_distortion(np.array([x, y]), intr.dist)
    direction = pose.rotation @ np.array([n[0], n[1], 1.0])
    return Ray(origin=pose.position, direction=direction)


def ray_point_distance(ray: Ray, point) -> float:
    """Perpendicular distance from a point to the ray's supporting line."""
    point = np.asarray(point, dtype=float).reshape(3)
    d = ray.direction / np.linalg.norm(ray.direction)
    rel = point - ray.origin
    return float(np.linalg.norm(np.cross(d, rel)))


def rotation_from_position(t) -> tuple[CameraPose, SphericalExtrinsic]:
    """Initial extrinsic from a measured camera position.

    Elevation θe = π/2 − atan2(t_z, √(t_x² + t_y²)) and azimuth
    θa = π/2 − atan2(t_y, t_x); the orientation is Rz(θa)·Rx(θe). For a
    camera on the +Y world axis this points the optical axis exactly at the
    origin; elsewhere it is an initial estimate to be refined.
    """
    t = np.asarray(t, dtype=float).reshape(3)
    if np.linalg.norm(t) < 1e-12:
        raise ZeroPosition("camera position too close to world origin")
    theta_e = math.pi / 2.0 - math.atan2(t[2], math.hypot(t[0], t[1]))
    theta_a = math.pi / 2.0 - math.atan2(t[1], t[0])
    R = rot_z(theta_a) @ rot_x(theta_e)
    return CameraPose(rotation=R, position=t), SphericalExtrinsic(theta_e, theta_a, t)


def spherical_rotation(theta_e: float, theta_a: float) -> np.ndarray:
    """Orientation Rz(θa)·Rx(θe) used by rotation_from_position."""
    return rot_z(theta_a) @ rot_x(theta_e)


def look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Exact pose whose optical axis points from ``position`` to ``target``.

    The in-image vertical is aligned with ``up`` the way Rz·Rx frames are on
    the +Y axis, so synthetic ground truth stays in the basin of the
    viewing-angle initialization.
    """
    position = np.asarray(position, dtype=float).reshape(3)
    target = np.asarray(target, dtype=float).reshape(3)
    up = np.asarray(up, dtype=float).reshape(3)
    f = target - position
    nf = np.linalg.norm(f)
    if nf < 1e-12:
        raise ZeroPosition("look_at position coincides with target")
    z = f / nf
    y = up - (up @ z) * z
    ny = np.linalg.norm(y)
    if ny < 1e-9:
        # optical axis parallel to up: fall back to world +Y as the vertical
        y = np.array([0.0, 1.0, 0.0]) - (np.array([0.0, 1.0, 0.0]) @ z) * z
        ny = np.linalg.norm(y)
    y = y / ny
    x = np.cross(y, z)
    R = np.stack([x, y, z], axis=1)
    return CameraPose(rotation=R, position=position)
