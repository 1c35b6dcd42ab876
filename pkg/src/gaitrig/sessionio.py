"""Capture-session data model, file formats, and frame synchronization.

Formats are JSON (rig configs, labels, reports, correspondences) and JSON
Lines with a header record (bulk detections and 3D tracks), all carrying an
explicit schema name and version. Floats are written with Python's shortest
round-trip repr, so save∘load is the identity on the data model. Field-level
documentation with byte-level examples lives in docs/formats.md.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NoOverlap, ParseError, SchemaVersionMismatch, ValidationError
from .geometry import CameraIntrinsics, CameraPose, SphericalExtrinsic
from .longrange import NudgeState

SCHEMA_VERSION = (1, 0)

DEFAULT_JOINTS = (
    "LFHD", "RFHD", "LBHD", "RBHD",
    "C7", "T10", "CLAV", "STRN", "RBAK",
    "LSHO", "LELB", "LWRA", "LWRB",
    "RSHO", "RELB", "RWRA", "RWRB",
    "LASI", "RASI", "LPSI", "RPSI",
    "LTHI", "LKNE", "LTIB", "LANK", "LHEE", "LTOE",
    "RTHI", "RKNE", "RTIB", "RANK", "RHEE", "RTOE",
)


def data_dir() -> Path:
    """Default data directory, overridable via GAITRIG_DATA_DIR."""
    return Path(os.environ.get("GAITRIG_DATA_DIR", "."))


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionCamera:
    camera_id: str
    intrinsics: CameraIntrinsics
    image_size: tuple[int, int] = (1280, 720)


@dataclass(frozen=True)
class DetectionFrame:
    """One camera frame: index, timestamp, and per-joint (u, v, confidence)."""

    frame_idx: int
    t_ms: float
    obs: dict[str, tuple[float, float, float]] = field(default_factory=dict)


@dataclass
class CaptureSession:
    cameras: dict[str, SessionCamera]
    streams: dict[str, list[DetectionFrame]]
    offsets: dict[str, int] = field(default_factory=dict)
    joints: tuple[str, ...] = DEFAULT_JOINTS

    def __post_init__(self):
        for cam_id, frames in self.streams.items():
            times = [f.t_ms for f in frames]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValidationError(f"stream {cam_id!r} timestamps are not strictly increasing")
        for cam_id in self.streams:
            self.offsets.setdefault(cam_id, 0)


@dataclass(frozen=True)
class SyncedInstance:
    index: int
    t_ms: float
    frames: dict[str, DetectionFrame]


@dataclass(frozen=True)
class JointDiag:
    n_views: int
    rms_ray_gap: float
    condition: float


@dataclass(frozen=True)
class TrackInstance:
    t_ms: float
    positions: dict[str, np.ndarray]
    diagnostics: dict[str, JointDiag] = field(default_factory=dict)


@dataclass
class SkeletonTrack3D:
    joints: tuple[str, ...]
    instances: list[TrackInstance]

    def __post_init__(self):
        times = [i.t_ms for i in self.instances]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("track timestamps are not strictly increasing")


@dataclass(frozen=True)
class RigCamera:
    camera_id: str
    intrinsics: CameraIntrinsics
    image_size: tuple[int, int] = (1280, 720)
    role: str = "close"
    pose: CameraPose | None = None
    nudge: NudgeState | None = None


@dataclass
class Rig:
    cameras: dict[str, RigCamera]

    def posed(self) -> dict[str, tuple[CameraIntrinsics, CameraPose]]:
        """id → (intrinsics, pose) for every camera with a pose."""
        return {
            cid: (c.intrinsics, c.pose)
            for cid, c in sorted(self.cameras.items())
            if c.pose is not None
        }


@dataclass(frozen=True)
class Correspondence:
    """One (3D marker, clicked 2D pixel) pair for camera localization."""

    marker_id: str
    world: np.ndarray
    image: np.ndarray
    frame_idx: int = 0

    def __post_init__(self):
        w = np.asarray(self.world, dtype=float).reshape(3)
        p = np.asarray(self.image, dtype=float).reshape(2)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(p))):
            raise ValidationError("correspondence coordinates must be finite")
        object.__setattr__(self, "world", w)
        object.__setattr__(self, "image", p)


# ---------------------------------------------------------------------------
# Frame synchronization
# ---------------------------------------------------------------------------


def align_frames(session: CaptureSession, offsets: dict[str, int] | None = None) -> list[SyncedInstance]:
    """Pair frames across cameras by index after integer per-camera offsets.

    Instance k takes frame (k + offset_c) of each camera c; instances missing
    a frame in any camera are dropped. Per-frame timestamps are retained for
    audit; pairing itself is purely index-based.
    """
    offsets = dict(session.offsets if offsets is None else offsets)
    for cam_id in session.streams:
        offsets.setdefault(cam_id, 0)
        if int(offsets[cam_id]) != offsets[cam_id]:
            raise ValidationError(f"offset for {cam_id!r} must be an integer")

    by_index: dict[str, dict[int, DetectionFrame]] = {}
    candidates: list[set[int]] = []
    for cam_id, frames in session.streams.items():
        idx = {f.frame_idx: f for f in frames}
        by_index[cam_id] = idx
        candidates.append({f.frame_idx - int(offsets[cam_id]) for f in frames})
    if not candidates:
        raise NoOverlap("session has no streams")

    common = sorted(set.intersection(*candidates))
    if not common:
        raise NoOverlap("offsets leave no common synchronized instance")

    cam_ids = sorted(session.streams)
    ref = cam_ids[0]
    out = []
    for k in common:
        frames = {cid: by_index[cid][k + int(offsets[cid])] for cid in cam_ids}
        out.append(SyncedInstance(index=k, t_ms=frames[ref].t_ms, frames=frames))
    return out


# ---------------------------------------------------------------------------
# Serialization helpers
# ---------------------------------------------------------------------------


def _check_schema(header: dict, expected: str, path, line_no: int = 1):
    schema = header.get("schema")
    if schema != expected:
        raise ParseError(f"{path}:{line_no}: expected schema {expected!r}, got {schema!r}")
    version = header.get("version")
    if not (isinstance(version, list) and len(version) == 2):
        raise ParseError(f"{path}:{line_no}: missing or malformed version field")
    major, minor = version
    if major != SCHEMA_VERSION[0]:
        raise SchemaVersionMismatch(
            f"{path}: schema {expected} major version {major} unsupported (supported {SCHEMA_VERSION[0]})"
        )
    if minor > SCHEMA_VERSION[1]:
        warnings.warn(f"{path}: schema {expected} minor version {minor} is newer than {SCHEMA_VERSION[1]}")


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _header(schema: str, **extra) -> dict:
    return {"schema": schema, "version": list(SCHEMA_VERSION), **extra}


def _intrinsics_to_dict(intr: CameraIntrinsics) -> dict:
    return {
        "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
        "skew": intr.skew, "dist": list(intr.dist),
    }


def _intrinsics_from_dict(d: dict, path) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            skew=float(d.get("skew", 0.0)), dist=tuple(float(x) for x in d.get("dist", [])),
        )
    except KeyError as e:
        raise ParseError(f"{path}: intrinsics missing field {e}") from e


def _pose_to_dict(pose: CameraPose) -> dict:
    return {"rotation": [list(row) for row in pose.rotation], "position": list(pose.position)}


def _pose_from_dict(d: dict, path) -> CameraPose:
    try:
        return CameraPose(rotation=np.array(d["rotation"], dtype=float), position=np.array(d["position"], dtype=float))
    except KeyError as e:
        raise ParseError(f"{path}: pose missing field {e}") from e
    except ValueError as e:
        raise ParseError(f"{path}: invalid pose: {e}") from e


def _nudge_to_dict(n: NudgeState) -> dict:
    return {
        "theta_e": n.base.theta_e,
        "theta_a": n.base.theta_a,
        "base_position": list(n.base.position),
        "d_theta_e": n.d_theta_e,
        "d_theta_a": n.d_theta_a,
        "d_d": n.d_d,
        "placement_axis": n.placement_axis,
    }


def _nudge_from_dict(d: dict, path) -> NudgeState:
    try:
        base = SphericalExtrinsic(
            theta_e=float(d["theta_e"]), theta_a=float(d["theta_a"]),
            position=np.array(d["base_position"], dtype=float),
        )
        return NudgeState(
            base=base,
            d_theta_e=float(d.get("d_theta_e", 0.0)),
            d_theta_a=float(d.get("d_theta_a", 0.0)),
            d_d=float(d.get("d_d", 0.0)),
            placement_axis=str(d.get("placement_axis", "+Y")),
        )
    except KeyError as e:
        raise ParseError(f"{path}: nudge state missing field {e}") from e


# ---------------------------------------------------------------------------
# Rig config (JSON)
# ---------------------------------------------------------------------------


def save_rig(path, rig: Rig) -> None:
    cams = []
    for cam_id in sorted(rig.cameras):
        c = rig.cameras[cam_id]
        entry = {
            "id": c.camera_id,
            "role": c.role,
            "image_size": list(c.image_size),
            "intrinsics": _intrinsics_to_dict(c.intrinsics),
        }
        if c.pose is not None:
            entry["pose"] = _pose_to_dict(c.pose)
        if c.nudge is not None:
            entry["nudge"] = _nudge_to_dict(c.nudge)
        cams.append(entry)
    doc = _header("gaitrig/rig", pose_convention="camera_to_world")
    doc["cameras"] = cams
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def load_rig(path) -> Rig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
    _check_schema(doc, "gaitrig/rig", path)
    cameras = {}
    for entry in doc.get("cameras", []):
        if "id" not in entry:
            raise ParseError(f"{path}: camera entry missing 'id'")
        cam = RigCamera(
            camera_id=entry["id"],
            intrinsics=_intrinsics_from_dict(entry.get("intrinsics", {}), path),
            image_size=tuple(entry.get("image_size", (1280, 720))),
            role=entry.get("role", "close"),
            pose=_pose_from_dict(entry["pose"], path) if "pose" in entry else None,
            nudge=_nudge_from_dict(entry["nudge"], path) if "nudge" in entry else None,
        )
        cameras[cam.camera_id] = cam
    return Rig(cameras=cameras)


# ---------------------------------------------------------------------------
# Detections (JSONL: header record, then one record per frame)
# ---------------------------------------------------------------------------


def save_detections(path, camera_id: str, frames: list[DetectionFrame], joints=DEFAULT_JOINTS,
                    image_size: tuple[int, int] = (1280, 720)) -> None:
    with open(path, "w") as f:
        f.write(_dump(_header("gaitrig/detections", camera_id=camera_id,
                              image_size=list(image_size), joints=list(joints))) + "\n")
        for fr in frames:
            rec = {
                "frame": fr.frame_idx,
                "t_ms": fr.t_ms,
                "obs": {name: list(fr.obs[name]) for name in sorted(fr.obs)},
            }
            f.write(_dump(rec) + "\n")


def load_detections(path):
    """Returns (camera_id, joints, image_size, frames)."""
    path = Path(path)
    frames: list[DetectionFrame] = []
    with open(path) as f:
        first = f.readline()
        if not first.strip():
            raise ParseError(f"{path}:1: empty detections file")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}:1: invalid JSON header: {e.msg}") from e
        _check_schema(header, "gaitrig/detections", path)
        camera_id = header.get("camera_id")
        if not camera_id:
            raise ParseError(f"{path}:1: header missing camera_id")
        joints = tuple(header.get("joints", DEFAULT_JOINTS))
        joint_set = set(joints)
        image_size = tuple(header.get("image_size", (1280, 720)))
        for line_no, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}:{line_no}: invalid JSON: {e.msg}") from e
            try:
                obs = {}
                for name, triple in rec.get("obs", {}).items():
                    if name not in joint_set:
                        raise ParseError(f"{path}:{line_no}: unknown joint name {name!r}")
                    u, v, conf = triple
                    obs[name] = (float(u), float(v), float(conf))
                frames.append(DetectionFrame(frame_idx=int(rec["frame"]), t_ms=float(rec["t_ms"]), obs=obs))
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(f"{path}:{line_no}: malformed detection record: {e}") from e
    return camera_id, joints, image_size, frames


# ---------------------------------------------------------------------------
# 3D tracks (JSONL)
# ---------------------------------------------------------------------------


def save_track(path, track: SkeletonTrack3D) -> None:
    with open(path, "w") as f:
        f.write(_dump(_header("gaitrig/track", joints=list(track.joints))) + "\n")
        for inst in track.instances:
            rec = {
                "t_ms": inst.t_ms,
                "joints": {name: [float(x) for x in inst.positions[name]] for name in sorted(inst.positions)},
            }
            if inst.diagnostics:
                rec["diag"] = {
                    name: [d.n_views, d.rms_ray_gap, d.condition]
                    for name, d in sorted(inst.diagnostics.items())
                }
            f.write(_dump(rec) + "\n")


def load_track(path) -> SkeletonTrack3D:
    path = Path(path)
    instances: list[TrackInstance] = []
    with open(path) as f:
        first = f.readline()
        if not first.strip():
            raise ParseError(f"{path}:1: empty track file")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}:1: invalid JSON header: {e.msg}") from e
        _check_schema(header, "gaitrig/track", path)
        joints = tuple(header.get("joints", DEFAULT_JOINTS))
        for line_no, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}:{line_no}: invalid JSON: {e.msg}") from e
            try:
                positions = {name: np.array(xyz, dtype=float) for name, xyz in rec.get("joints", {}).items()}
                diagnostics = {
                    name: JointDiag(n_views=int(t[0]), rms_ray_gap=float(t[1]), condition=float(t[2]))
                    for name, t in rec.get("diag", {}).items()
                }
                instances.append(TrackInstance(t_ms=float(rec["t_ms"]), positions=positions, diagnostics=diagnostics))
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(f"{path}:{line_no}: malformed track record: {e}") from e
    return SkeletonTrack3D(joints=joints, instances=instances)


# ---------------------------------------------------------------------------
# Box labels (JSONL)
# ---------------------------------------------------------------------------


def save_labels(path, labels) -> None:
    with open(path, "w") as f:
        f.write(_dump(_header("gaitrig/labels")) + "\n")
        for b in labels:
            f.write(_dump({"camera": b.camera_id, "frame": b.frame_idx, "rect": [float(x) for x in b.rect]}) + "\n")


def load_labels(path):
    from .evaluate import BoxLabel

    path = Path(path)
    labels = []
    with open(path) as f:
        first = f.readline()
        if not first.strip():
            raise ParseError(f"{path}:1: empty labels file")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}:1: invalid JSON header: {e.msg}") from e
        _check_schema(header, "gaitrig/labels", path)
        for line_no, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                labels.append(BoxLabel(camera_id=rec["camera"], frame_idx=int(rec["frame"]),
                                       rect=tuple(float(x) for x in rec["rect"])))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise ParseError(f"{path}:{line_no}: malformed label record: {e}") from e
    return labels


# ---------------------------------------------------------------------------
# Correspondences (JSON)
# ---------------------------------------------------------------------------


def save_correspondences(path, camera_id: str, corrs) -> None:
    doc = _header("gaitrig/correspondences", camera_id=camera_id)
    doc["items"] = [
        {
            "marker_id": c.marker_id,
            "world": [float(x) for x in c.world],
            "image": [float(x) for x in c.image],
            "frame": c.frame_idx,
        }
        for c in corrs
    ]
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def load_correspondences(path):
    """Returns (camera_id, list of Correspondence)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
    _check_schema(doc, "gaitrig/correspondences", path)
    corrs = []
    for i, item in enumerate(doc.get("items", [])):
        try:
            corrs.append(Correspondence(
                marker_id=item["marker_id"],
                world=np.array(item["world"], dtype=float),
                image=np.array(item["image"], dtype=float),
                frame_idx=int(item.get("frame", 0)),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}: item {i}: malformed correspondence: {e}") from e
    return doc.get("camera_id"), corrs


# ---------------------------------------------------------------------------
# Reports (JSON, free-form payload under a schema header)
# ---------------------------------------------------------------------------


def save_report(path, payload: dict) -> None:
    doc = _header("gaitrig/report")
    doc["report"] = payload
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def load_report(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
    _check_schema(doc, "gaitrig/report", path)
    return doc.get("report", {})


# ---------------------------------------------------------------------------
# Session assembly
# ---------------------------------------------------------------------------


def build_session(rig: Rig, detections_by_camera: dict[str, list[DetectionFrame]],
                  offsets: dict[str, int] | None = None,
                  joints=DEFAULT_JOINTS) -> CaptureSession:
    cameras = {}
    for cam_id in detections_by_camera:
        if cam_id not in rig.cameras:
            raise ValidationError(f"detections reference camera {cam_id!r} not present in rig")
        rc = rig.cameras[cam_id]
        cameras[cam_id] = SessionCamera(camera_id=cam_id, intrinsics=rc.intrinsics, image_size=rc.image_size)
    return CaptureSession(
        cameras=cameras,
        streams={cid: list(frames) for cid, frames in detections_by_camera.items()},
        offsets=dict(offsets or {}),
        joints=tuple(joints),
    )


def load_session(rig_path, detection_paths, offsets: dict[str, int] | None = None) -> tuple[Rig, CaptureSession]:
    rig = load_rig(rig_path)
    detections = {}
    joints = DEFAULT_JOINTS
    for p in detection_paths:
        cam_id, joints, _size, frames = load_detections(p)
        detections[cam_id] = frames
    return rig, build_session(rig, detections, offsets=offsets, joints=joints)
