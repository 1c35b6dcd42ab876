"""Quantitative evaluation: reprojection error, box containment, detection success.

Reprojection error is the mean of per-point Euclidean pixel distances between
reprojected and reference 2D keypoints. Long-range quality uses a coarser
signal: the fraction of reprojected keypoints falling inside manually labeled
subject bounding boxes (boundary points count as inside), plus a per-frame
detection success criterion (a frame succeeds when at least a threshold
fraction of its detected keypoints lie in the label box).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyInput, LengthMismatch, NoLabels, ValidationError
from .geometry import DEPTH_EPS, CameraIntrinsics, CameraPose, project_points
from .sessionio import CaptureSession, SkeletonTrack3D, align_frames

HIST_BIN_WIDTH = 0.5


@dataclass(frozen=True)
class BoxLabel:
    """Axis-aligned subject bounding box on one frame of one camera."""

    camera_id: str
    frame_idx: int
    rect: tuple[float, float, float, float]  # u_min, v_min, u_max, v_max

    def __post_init__(self):
        u0, v0, u1, v1 = self.rect
        if not all(math.isfinite(x) for x in self.rect):
            raise ValidationError("box corners must be finite")
        if not (u0 < u1 and v0 < v1):
            raise ValidationError(f"degenerate box rect {self.rect}")
        object.__setattr__(self, "rect", tuple(float(x) for x in self.rect))

    def contains(self, u: float, v: float) -> bool:
        u0, v0, u1, v1 = self.rect
        return u0 <= u <= u1 and v0 <= v <= v1


@dataclass(frozen=True)
class ErrorStats:
    n: int
    mean: float
    median: float
    p95: float
    max: float
    per_camera: dict[str, "ErrorStats"] | None = None

    def to_dict(self) -> dict:
        d = {"n": self.n, "mean": self.mean, "median": self.median, "p95": self.p95, "max": self.max}
        if self.per_camera is not None:
            d["per_camera"] = {k: v.to_dict() for k, v in sorted(self.per_camera.items())}
        return d


def _stats_from_norms(norms: np.ndarray) -> ErrorStats:
    return ErrorStats(
        n=int(len(norms)),
        mean=float(np.mean(norms)),
        median=float(np.median(norms)),
        p95=float(np.percentile(norms, 95)),
        max=float(np.max(norms)),
    )


def reprojection_error(
    pred: Sequence,
    ref: Sequence,
    camera_ids: Sequence[str] | None = None,
) -> ErrorStats:
    """Mean (and distribution) of Euclidean pixel distances between paired
    2D points. Optional per-point camera ids add a per-camera breakdown."""
    if len(pred) != len(ref):
        raise LengthMismatch(f"pred has {len(pred)} points, ref has {len(ref)}")
    if len(pred) == 0:
        raise EmptyInput("reprojection error over empty input")
    p = np.asarray(pred, dtype=float).reshape(-1, 2)
    r = np.asarray(ref, dtype=float).reshape(-1, 2)
    norms = np.linalg.norm(p - r, axis=1)
    stats = _stats_from_norms(norms)
    if camera_ids is not None:
        if len(camera_ids) != len(pred):
            raise LengthMismatch("camera_ids length does not match points")
        ids = np.asarray(camera_ids)
        per = {str(cid): _stats_from_norms(norms[ids == cid]) for cid in sorted(set(camera_ids))}
        stats = ErrorStats(
            n=stats.n, mean=stats.mean, median=stats.median, p95=stats.p95, max=stats.max, per_camera=per
        )
    return stats


@dataclass(frozen=True)
class ContainmentStats:
    fraction: float
    n_inside: int
    n_keypoints: int
    per_subject: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "n_inside": self.n_inside,
            "n_keypoints": self.n_keypoints,
            "per_subject": dict(sorted(self.per_subject.items())),
        }


def bbox_containment(
    keypoints: Mapping[tuple[str, int], np.ndarray],
    labels: Sequence[BoxLabel],
    subjects: Mapping[tuple[str, int], str] | None = None,
) -> ContainmentStats:
    """Fraction of individual keypoints inside their frame's labeled box.

    ``keypoints`` maps (camera_id, frame_idx) to an (N, 2) pixel array.
    Boundary points count as inside. Labeled frames with no keypoint entry
    contribute nothing.
    """
    if not labels:
        raise NoLabels("no bounding-box labels given")
    total = 0
    inside = 0
    by_subject: dict[str, list[int]] = {}
    for b in labels:
        pts = keypoints.get((b.camera_id, b.frame_idx))
        if pts is None or len(pts) == 0:
            continue
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        u0, v0, u1, v1 = b.rect
        ok = (pts[:, 0] >= u0) & (pts[:, 0] <= u1) & (pts[:, 1] >= v0) & (pts[:, 1] <= v1)
        total += len(pts)
        inside += int(ok.sum())
        if subjects is not None:
            sid = subjects.get((b.camera_id, b.frame_idx), "unknown")
            acc = by_subject.setdefault(sid, [0, 0])
            acc[0] += int(ok.sum())
            acc[1] += len(pts)
    per_subject = {sid: (a / b if b else 0.0) for sid, (a, b) in by_subject.items()}
    fraction = inside / total if total else 0.0
    return ContainmentStats(fraction=fraction, n_inside=inside, n_keypoints=total, per_subject=per_subject)


@dataclass(frozen=True)
class SuccessStats:
    rate: float
    n_frames: int
    n_success: int

    def to_dict(self) -> dict:
        return {"rate": self.rate, "n_frames": self.n_frames, "n_success": self.n_success}


def detection_success(
    detections: Mapping[tuple[str, int], np.ndarray],
    labels: Sequence[BoxLabel],
    threshold: float = 0.2,
) -> SuccessStats:
    """Per-frame success: at least ``threshold`` of the frame's detected
    keypoints fall inside the label box. Frames with no detections fail."""
    if not labels:
        raise NoLabels("no bounding-box labels given")
    if not (0.0 < threshold <= 1.0):
        raise ValidationError(f"threshold must be in (0, 1], got {threshold}")
    n_success = 0
    for b in labels:
        pts = detections.get((b.camera_id, b.frame_idx))
        if pts is None or len(pts) == 0:
            continue
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        u0, v0, u1, v1 = b.rect
        ok = (pts[:, 0] >= u0) & (pts[:, 0] <= u1) & (pts[:, 1] >= v0) & (pts[:, 1] <= v1)
        if ok.sum() / len(pts) >= threshold:
            n_success += 1
    return SuccessStats(rate=n_success / len(labels), n_frames=len(labels), n_success=n_success)


@dataclass(frozen=True)
class CameraErrorReport:
    stats: ErrorStats
    hist_counts: tuple[int, ...]
    hist_bin_width: float = HIST_BIN_WIDTH

    def to_dict(self) -> dict:
        return {
            "stats": self.stats.to_dict(),
            "hist_bin_width": self.hist_bin_width,
            "hist_counts": list(self.hist_counts),
        }


@dataclass(frozen=True)
class EvalReport:
    overall: ErrorStats
    per_camera: dict[str, CameraErrorReport]

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "per_camera": {k: v.to_dict() for k, v in sorted(self.per_camera.items())},
        }

    def table(self) -> list[tuple[str, int, float, float, float, float]]:
        """Plot-ready rows: (camera, n, mean, median, p95, max)."""
        rows = [("all", self.overall.n, self.overall.mean, self.overall.median, self.overall.p95, self.overall.max)]
        for cid, rep in sorted(self.per_camera.items()):
            s = rep.stats
            rows.append((cid, s.n, s.mean, s.median, s.p95, s.max))
        return rows


def _histogram(norms: np.ndarray, bin_width: float) -> tuple[int, ...]:
    if len(norms) == 0:
        return ()
    n_bins = int(np.floor(norms.max() / bin_width)) + 1
    counts = np.bincount(np.floor(norms / bin_width).astype(int), minlength=n_bins)
    return tuple(int(c) for c in counts)


def error_report(
    session: CaptureSession,
    cameras: Mapping[str, tuple[CameraIntrinsics, CameraPose]],
    track: SkeletonTrack3D,
    confidence_floor: float = 0.5,
    bin_width: float = HIST_BIN_WIDTH,
) -> EvalReport:
    """Reproject the track into each camera and compare against detections.

    Pairs each triangulated joint with the same camera's detection of it at
    the same synchronized instance (detections below the confidence floor are
    ignored, mirroring the observation filter of the adjustment stage).
    """
    instances = align_frames(session)
    if len(track.instances) != len(instances):
        raise ValidationError(
            f"track has {len(track.instances)} instances, session aligns to {len(instances)}"
        )
    norms_by_cam: dict[str, list[np.ndarray]] = {cid: [] for cid in sorted(cameras) if cid in session.streams}
    for i, inst in enumerate(instances):
        tr = track.instances[i]
        if not tr.positions:
            continue
        names = sorted(tr.positions)
        pts = np.stack([tr.positions[n] for n in names])
        for cid in norms_by_cam:
            intr, pose = cameras[cid]
            obs = inst.frames[cid].obs
            rows = [k for k, n in enumerate(names) if n in obs and obs[n][2] >= confidence_floor]
            if not rows:
                continue
            pix, z = project_points(pts[rows], intr, pose)
            ref = np.array([[obs[names[k]][0], obs[names[k]][1]] for k in rows])
            ok = z > DEPTH_EPS
            if ok.any():
                norms_by_cam[cid].append(np.linalg.norm(pix[ok] - ref[ok], axis=1))

    per_camera = {}
    all_norms = []
    for cid, chunks in norms_by_cam.items():
        if not chunks:
            continue
        norms = np.concatenate(chunks)
        all_norms.append(norms)
        per_camera[cid] = CameraErrorReport(
            stats=_stats_from_norms(norms), hist_counts=_histogram(norms, bin_width), hist_bin_width=bin_width
        )
    if not all_norms:
        raise EmptyInput("no reprojectable joint observations")
    overall = _stats_from_norms(np.concatenate(all_norms))
    overall = ErrorStats(
        n=overall.n, mean=overall.mean, median=overall.median, p95=overall.p95, max=overall.max,
        per_camera={cid: rep.stats for cid, rep in per_camera.items()},
    )
    return EvalReport(overall=overall, per_camera=per_camera)
