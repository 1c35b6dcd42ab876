"""Multi-view ray triangulation of skeleton keypoints.

Every 2D observation back-projects to a world ray k + w·c. Assuming the rays
meet, each pair (i, j) contributes the three equations
w_i·c_i − w_j·c_j = k_j − k_i; stacking all pairs gives an overdetermined
linear system in the per-ray parameters w, solved by least squares. The
triangulated point is the mean of the ray endpoints. For three views this is
exactly the 9x3 stacked pairwise system; more views extend it pairwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateRays, EmptySession, NotEnoughRays, TooFewConfidentViews
from .geometry import CameraIntrinsics, CameraPose, Ray, pixel_ray
from .sessionio import CaptureSession, JointDiag, SkeletonTrack3D, TrackInstance, align_frames

CONDITION_LIMIT = 1e12
DEFAULT_CONFIDENCE_FLOOR = 0.5


@dataclass(frozen=True)
class JointObservation:
    """A 2D keypoint seen by one camera; confidence 1.0 for manual/mocap."""

    camera_id: str
    pixel: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.pixel, dtype=float).reshape(2)
        if not np.all(np.isfinite(p)):
            raise ValueError("pixel must be finite")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        object.__setattr__(self, "pixel", p)


@dataclass(frozen=True)
class TriangulationResult:
    point: np.ndarray
    per_ray_params: np.ndarray
    rms_ray_gap: float
    condition: float


def pairwise_system(rays: Sequence[Ray]) -> tuple[np.ndarray, np.ndarray]:
    """Stacked pairwise A·w = b over all ray pairs; 9x3 for three rays."""
    n = len(rays)
    pairs = list(combinations(range(n), 2))
    A = np.zeros((3 * len(pairs), n))
    b = np.zeros(3 * len(pairs))
    for row, (i, j) in enumerate(pairs):
        sl = slice(3 * row, 3 * row + 3)
        A[sl, i] = rays[i].direction
        A[sl, j] = -rays[j].direction
        b[sl] = rays[j].origin - rays[i].origin
    return A, b


def triangulate_rays(rays: Sequence[Ray]) -> TriangulationResult:
    """Least-squares intersection of two or more rays.

    Raises DegenerateRays when the condition number of AᵀA exceeds 1e12
    (near-parallel rays), NotEnoughRays below two rays.
    """
    if len(rays) < 2:
        raise NotEnoughRays(f"triangulation needs at least 2 rays, got {len(rays)}")
    A, b = pairwise_system(rays)
    w, _residual, _rank, s = np.linalg.lstsq(A, b, rcond=None)
    if s[-1] <= 0.0 or (s[0] / s[-1]) ** 2 > CONDITION_LIMIT:
        cond = math.inf if s[-1] <= 0.0 else (s[0] / s[-1]) ** 2
        raise DegenerateRays(f"near-parallel rays, normal-equation condition {cond:.3e}")
    condition = (s[0] / s[-1]) ** 2
    endpoints = np.stack([r.origin + wi * r.direction for r, wi in zip(rays, w)])
    point = endpoints.mean(axis=0)
    gap = float(np.sqrt(np.mean(np.sum((endpoints - point) ** 2, axis=1))))
    return TriangulationResult(point=point, per_ray_params=w, rms_ray_gap=gap, condition=condition)


def triangulate_joint(
    observations: Sequence[JointObservation],
    cameras: Mapping[str, tuple[CameraIntrinsics, CameraPose]],
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
) -> TriangulationResult:
    """Back-project confident observations to rays and intersect them."""
    kept = [o for o in observations if o.confidence >= confidence_floor]
    if len(kept) < 2:
        raise TooFewConfidentViews(
            f"need at least 2 observations with confidence >= {confidence_floor}, got {len(kept)}"
        )
    rays = []
    for o in kept:
        intr, pose = cameras[o.camera_id]
        rays.append(pixel_ray(o.pixel, intr, pose))
    return triangulate_rays(rays)


def triangulate_sequence(
    session: CaptureSession,
    cameras: Mapping[str, tuple[CameraIntrinsics, CameraPose]],
    joint_schema: Sequence[str] | None = None,
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
) -> SkeletonTrack3D:
    """Triangulate every joint at every synchronized instance.

    Joints with fewer than two confident views at an instance are recorded as
    gaps (absent from the instance), never interpolated.
    """
    joints = tuple(joint_schema if joint_schema is not None else session.joints)
    if not session.streams:
        raise EmptySession("session has no detection streams")
    instances = align_frames(session)
    if not instances:
        raise EmptySession("no synchronized instances")

    cam_ids = [c for c in sorted(session.streams) if c in cameras]
    out: list[TrackInstance] = []
    for inst in instances:
        positions: dict[str, np.ndarray] = {}
        diagnostics: dict[str, JointDiag] = {}
        for name in joints:
            obs = []
            for cid in cam_ids:
                triple = inst.frames[cid].obs.get(name)
                if triple is None:
                    continue
                u, v, conf = triple
                if conf >= confidence_floor:
                    obs.append(JointObservation(camera_id=cid, pixel=np.array([u, v]), confidence=conf))
            if len(obs) < 2:
                continue
            try:
                res = triangulate_joint(obs, cameras, confidence_floor=confidence_floor)
            except DegenerateRays:
                continue
            positions[name] = res.point
            diagnostics[name] = JointDiag(n_views=len(obs), rms_ray_gap=res.rms_ray_gap, condition=res.condition)
        out.append(TrackInstance(t_ms=inst.t_ms, positions=positions, diagnostics=diagnostics))
    return SkeletonTrack3D(joints=joints, instances=out)


def estimate_offsets(
    session: CaptureSession,
    cameras: Mapping[str, tuple[CameraIntrinsics, CameraPose]],
    window: int = 20,
    max_instances: int = 50,
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
) -> dict[str, int]:
    """Per-camera integer frame offsets by maximizing triangulation consistency.

    The first camera (sorted id) is the reference with offset 0; each other
    camera's offset is searched over ±window by minimizing the mean ray gap of
    two-view triangulations against the reference.
    """
    cam_ids = sorted(c for c in session.streams if c in cameras)
    if len(cam_ids) < 2:
        raise EmptySession("offset estimation needs at least two posed cameras with detections")
    ref = cam_ids[0]
    ref_frames = {f.frame_idx: f for f in session.streams[ref]}
    offsets = {ref: 0}
    for cid in cam_ids[1:]:
        other_frames = {f.frame_idx: f for f in session.streams[cid]}
        best_off, best_score = 0, math.inf
        for off in range(-window, window + 1):
            gaps = []
            for k in sorted(ref_frames):
                if len(gaps) >= max_instances:
                    break
                fo = other_frames.get(k + off)
                if fo is None:
                    continue
                fr = ref_frames[k]
                for name, (u, v, conf) in fr.obs.items():
                    if conf < confidence_floor:
                        continue
                    triple = fo.obs.get(name)
                    if triple is None or triple[2] < confidence_floor:
                        continue
                    obs = [
                        JointObservation(ref, np.array([u, v]), conf),
                        JointObservation(cid, np.array([triple[0], triple[1]]), triple[2]),
                    ]
                    try:
                        gaps.append(triangulate_joint(obs, cameras, confidence_floor).rms_ray_gap)
                    except DegenerateRays:
                        continue
            if gaps:
                score = float(np.mean(gaps))
                if score < best_score:
                    best_score, best_off = score, off
        offsets[cid] = best_off
    return offsets
