"""Synthetic scene generator: walker tracks, camera rigs, noisy detections.

Stands in for the physical capture so the whole pipeline can be exercised and
scored against exact ground truth. Randomness comes from numpy's Philox4x64-10
counter-based generator keyed by (seed, stream tag), so every stream is
reproducible and independently splittable; see README for the tag map.

The walker is deliberately minimal: a rigid 33-marker cloud that translates
along a parametric ground path, turns with the path tangent, and oscillates
sinusoidally (vertical bob, yaw sway). Rigid motion keeps all inter-marker
distances exactly constant, which the oracle tests rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .evaluate import BoxLabel
from .geometry import (
    DEPTH_EPS,
    CameraIntrinsics,
    CameraPose,
    look_at,
    project_points,
    rotation_from_position,
)
from .longrange import NudgeState, placement_axis_vector
from .sessionio import (
    DEFAULT_JOINTS,
    DetectionFrame,
    Rig,
    RigCamera,
    SkeletonTrack3D,
    TrackInstance,
)

STREAM_WALKER = 0x57
STREAM_RIG = 0x52
STREAM_DETECTIONS = 0x1000  # + camera index


def philox(seed: int, stream: int) -> np.random.Generator:
    """Philox4x64-10 generator keyed by (seed, stream tag)."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


# Unit-height marker template (x lateral, y forward, z up); spans z in [0, 1]
# so the subject's pixel height at distance d is fy * height / d.
_TEMPLATE_33 = {
    "LFHD": (0.05, 0.06, 1.00), "RFHD": (-0.05, 0.06, 1.00),
    "LBHD": (0.05, -0.06, 0.99), "RBHD": (-0.05, -0.06, 0.99),
    "C7": (0.00, -0.04, 0.845), "T10": (0.00, -0.05, 0.70),
    "CLAV": (0.00, 0.04, 0.835), "STRN": (0.00, 0.06, 0.72), "RBAK": (-0.08, -0.06, 0.78),
    "LSHO": (0.12, 0.00, 0.82), "LELB": (0.16, 0.02, 0.63),
    "LWRA": (0.18, 0.04, 0.49), "LWRB": (0.20, 0.02, 0.48),
    "RSHO": (-0.12, 0.00, 0.82), "RELB": (-0.16, 0.02, 0.63),
    "RWRA": (-0.18, 0.04, 0.49), "RWRB": (-0.20, 0.02, 0.48),
    "LASI": (0.07, 0.08, 0.54), "RASI": (-0.07, 0.08, 0.54),
    "LPSI": (0.04, -0.08, 0.55), "RPSI": (-0.04, -0.08, 0.55),
    "LTHI": (0.09, 0.03, 0.40), "LKNE": (0.06, 0.01, 0.28), "LTIB": (0.07, 0.02, 0.17),
    "LANK": (0.05, -0.01, 0.045), "LHEE": (0.04, -0.06, 0.02), "LTOE": (0.05, 0.08, 0.00),
    "RTHI": (-0.09, 0.03, 0.40), "RKNE": (-0.06, 0.01, 0.28), "RTIB": (-0.07, 0.02, 0.17),
    "RANK": (-0.05, -0.01, 0.045), "RHEE": (-0.04, -0.06, 0.02), "RTOE": (-0.05, 0.08, 0.00),
}
assert len(_TEMPLATE_33) == 33 and tuple(_TEMPLATE_33) == DEFAULT_JOINTS


@dataclass(frozen=True)
class PathSpec:
    """Parametric ground path of the walker root."""

    kind: str = "circle"  # "circle" or "line"
    speed: float = 1.2  # m/s
    radius: float = 2.0  # circle
    center: tuple[float, float] = (0.0, 0.0)
    length: float = 4.0  # line: walks x in [-length/2, length/2] through center

    def position_heading(self, t: float) -> tuple[float, float, float]:
        """(x, y, heading) of the root at time t seconds."""
        if self.kind == "circle":
            ang = self.speed / self.radius * t
            x = self.center[0] + self.radius * math.cos(ang)
            y = self.center[1] + self.radius * math.sin(ang)
            return x, y, ang + math.pi / 2.0
        if self.kind == "line":
            # triangle-wave back and forth along x
            if self.speed == 0.0 or self.length == 0.0:
                return self.center[0], self.center[1], 0.0
            s = (self.speed * t) % (2.0 * self.length)
            if s < self.length:
                return self.center[0] - self.length / 2.0 + s, self.center[1], 0.0
            return self.center[0] + 1.5 * self.length - s, self.center[1], math.pi
        raise ValidationError(f"unknown path kind {self.kind!r}")


@dataclass(frozen=True)
class WalkerSpec:
    joint_count: int = 33
    height: float = 1.6  # meters, toe to crown
    path: PathSpec = field(default_factory=PathSpec)
    duration_s: float = 120.0
    fps: float = 30.0

    def __post_init__(self):
        if self.joint_count < 2:
            raise ValidationError(f"joint_count must be >= 2, got {self.joint_count}")
        if self.fps <= 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        if self.height <= 0:
            raise ValidationError(f"height must be positive, got {self.height}")


@dataclass(frozen=True)
class RigSpec:
    close_count: int = 3
    close_radius: float = 8.0
    close_height: float = 1.6
    long_distance: float = 60.0
    placement_axis: str = "+Y"
    image_size: tuple[int, int] = (1280, 720)
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(fx=900.0, fy=900.0, cx=640.0, cy=360.0)
    )
    perturb_sigma: float = 0.0  # std of tape-measure position error, meters
    perturb_sigma_long: float | None = None  # long camera override (longer tape run)
    perturb_seed: int = 0

    def __post_init__(self):
        if self.close_radius <= 0:
            raise ValidationError("close_radius must be positive")
        if self.long_distance <= self.close_radius:
            raise ValidationError("long camera must sit beyond the close-camera radius")


def _template(joint_count: int, height: float) -> tuple[tuple[str, ...], np.ndarray]:
    if joint_count == 33:
        names = DEFAULT_JOINTS
        pts = np.array([_TEMPLATE_33[n] for n in names])
    else:
        names = tuple(f"j{i:02d}" for i in range(joint_count))
        z = np.linspace(0.0, 1.0, joint_count)
        ang = 2.399 * np.arange(joint_count)
        pts = np.stack([0.03 * np.sin(ang), 0.03 * np.cos(ang), z], axis=1)
    return names, pts * height


def gen_walker(spec: WalkerSpec, seed: int = 0) -> SkeletonTrack3D:
    """Ground-truth 3D marker track, deterministic per seed."""
    rng = philox(seed, STREAM_WALKER)
    gait_hz = rng.uniform(1.6, 2.2)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    moving = spec.path.speed > 0.0
    bob_amp = 0.015 * spec.height if moving else 0.0
    sway_amp = 0.06 if moving else 0.0

    names, template = _template(spec.joint_count, spec.height)
    n_frames = int(round(spec.duration_s * spec.fps))
    instances = []
    for k in range(n_frames):
        t = k / spec.fps if moving else 0.0
        x, y, heading = spec.path.position_heading(t)
        yaw = heading + sway_amp * math.sin(2.0 * math.pi * gait_hz * t + phase)
        bob = bob_amp * math.sin(4.0 * math.pi * gait_hz * t + phase)
        c, s = math.cos(yaw), math.sin(yaw)
        Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pts = template @ Rz.T + np.array([x, y, bob])
        positions = {name: pts[i] for i, name in enumerate(names)}
        instances.append(TrackInstance(t_ms=k * 1000.0 / spec.fps, positions=positions))
    return SkeletonTrack3D(joints=names, instances=instances)


def gen_rig(spec: RigSpec) -> tuple[Rig, Rig]:
    """(ground-truth rig, initial-estimate rig).

    Truth poses look exactly at the world origin. Initial estimates start
    from tape-measure-perturbed positions: close cameras assume they point at
    the origin (exact look-at from the measured spot); the long camera on its
    placement axis uses the elevation/azimuth construction, which also seeds
    its nudge state.
    """
    rng = philox(spec.perturb_seed, STREAM_RIG)

    def perturb(p: np.ndarray, sigma: float) -> np.ndarray:
        return p + rng.normal(0.0, sigma, 3) if sigma > 0 else p.copy()

    truth_cams: dict[str, RigCamera] = {}
    init_cams: dict[str, RigCamera] = {}
    for k in range(spec.close_count):
        cid = f"close{k}"
        ang = math.pi / 2.0 + 2.0 * math.pi * k / spec.close_count
        pos = np.array([
            spec.close_radius * math.cos(ang),
            spec.close_radius * math.sin(ang),
            spec.close_height,
        ])
        measured = perturb(pos, spec.perturb_sigma)
        truth_cams[cid] = RigCamera(cid, spec.intrinsics, spec.image_size, "close", pose=look_at(pos))
        init_cams[cid] = RigCamera(cid, spec.intrinsics, spec.image_size, "close", pose=look_at(measured))

    axis = placement_axis_vector(spec.placement_axis)
    long_pos = axis * spec.long_distance
    sigma_long = spec.perturb_sigma if spec.perturb_sigma_long is None else spec.perturb_sigma_long
    measured = perturb(long_pos, sigma_long)
    long_pose, spherical = rotation_from_position(measured)
    nudge = NudgeState(base=spherical, placement_axis=spec.placement_axis)
    truth_cams["long"] = RigCamera("long", spec.intrinsics, spec.image_size, "long", pose=look_at(long_pos))
    init_cams["long"] = RigCamera("long", spec.intrinsics, spec.image_size, "long", pose=long_pose, nudge=nudge)
    return Rig(cameras=truth_cams), Rig(cameras=init_cams)


def _visible(pix: np.ndarray, z: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    w, h = image_size
    return (z > DEPTH_EPS) & (pix[:, 0] >= 0) & (pix[:, 0] <= w) & (pix[:, 1] >= 0) & (pix[:, 1] <= h)


def render_detections(
    track: SkeletonTrack3D,
    rig: Rig,
    noise_sigma: float = 0.0,
    dropout: float = 0.0,
    seed: int = 0,
    cameras: list[str] | None = None,
):
    """Simulated detector output plus a ground-truth overlay.

    Projects the track into each camera, adds i.i.d. Gaussian pixel noise,
    drops joints i.i.d. at the dropout rate, and omits joints that fall
    outside the frame or behind the camera. Confidence for a kept joint comes
    from its dropout draw s: conf = 1 − rate·(1−s)/(1−rate), so barely
    surviving joints score lowest (1 − rate) and rate 0 gives exactly 1.0.
    Returns (detections, truth_overlay) as camera → DetectionFrame lists.
    """
    if noise_sigma < 0:
        raise ValidationError("noise_sigma must be >= 0")
    if not (0.0 <= dropout < 1.0):
        raise ValidationError("dropout must be in [0, 1)")
    cam_ids = sorted(cameras if cameras is not None else rig.cameras)
    names = list(track.joints)
    n_inst = len(track.instances)
    all_pts = np.zeros((n_inst, len(names), 3))
    present = np.zeros((n_inst, len(names)), dtype=bool)
    for i, inst in enumerate(track.instances):
        for j, name in enumerate(names):
            p = inst.positions.get(name)
            if p is not None:
                all_pts[i, j] = p
                present[i, j] = True

    detections: dict[str, list[DetectionFrame]] = {}
    overlay: dict[str, list[DetectionFrame]] = {}
    for ci, cid in enumerate(cam_ids):
        cam = rig.cameras[cid]
        if cam.pose is None:
            raise ValidationError(f"camera {cid!r} has no pose to render from")
        rng = philox(seed, STREAM_DETECTIONS + ci)
        pix, z = project_points(all_pts.reshape(-1, 3), cam.intrinsics, cam.pose)
        pix = pix.reshape(n_inst, len(names), 2)
        z = z.reshape(n_inst, len(names))
        noise = rng.normal(0.0, noise_sigma, pix.shape) if noise_sigma > 0 else np.zeros_like(pix)
        draws = rng.uniform(0.0, 1.0, (n_inst, len(names)))
        noisy = pix + noise

        det_frames, truth_frames = [], []
        for i, inst in enumerate(track.instances):
            det_obs: dict[str, tuple[float, float, float]] = {}
            truth_obs: dict[str, tuple[float, float, float]] = {}
            vis_t = _visible(pix[i], z[i], cam.image_size) & present[i]
            vis_d = _visible(noisy[i], z[i], cam.image_size) & present[i]
            for j, name in enumerate(names):
                if vis_t[j]:
                    truth_obs[name] = (float(pix[i, j, 0]), float(pix[i, j, 1]), 1.0)
                if vis_d[j] and draws[i, j] >= dropout:
                    conf = 1.0 - dropout * (1.0 - draws[i, j]) / (1.0 - dropout) if dropout > 0 else 1.0
                    det_obs[name] = (float(noisy[i, j, 0]), float(noisy[i, j, 1]), float(conf))
            det_frames.append(DetectionFrame(frame_idx=i, t_ms=inst.t_ms, obs=det_obs))
            truth_frames.append(DetectionFrame(frame_idx=i, t_ms=inst.t_ms, obs=truth_obs))
        detections[cid] = det_frames
        overlay[cid] = truth_frames
    return detections, overlay


def gen_boxes(
    track: SkeletonTrack3D,
    rig: Rig,
    camera_id: str,
    inflate: float = 0.0,
    frame_step: int = 1,
) -> list[BoxLabel]:
    """Ground-truth subject boxes from the track's projection into one camera.

    ``inflate`` adds that fraction of each dimension as margin on every side.
    """
    cam = rig.cameras[camera_id]
    if cam.pose is None:
        raise ValidationError(f"camera {camera_id!r} has no pose")
    labels = []
    for i in range(0, len(track.instances), frame_step):
        inst = track.instances[i]
        if len(inst.positions) < 2:
            continue
        pts = np.stack([inst.positions[n] for n in sorted(inst.positions)])
        pix, z = project_points(pts, cam.intrinsics, cam.pose)
        ok = z > DEPTH_EPS
        if ok.sum() < 2:
            continue
        u0, v0 = pix[ok].min(axis=0)
        u1, v1 = pix[ok].max(axis=0)
        du, dv = (u1 - u0) * inflate, (v1 - v0) * inflate
        labels.append(BoxLabel(camera_id=camera_id, frame_idx=i,
                               rect=(u0 - du, v0 - dv, u1 + du, v1 + dv)))
    return labels


def perturb_pose(pose: CameraPose, rot_sigma: float, pos_sigma: float, rng: np.random.Generator) -> CameraPose:
    """Random small pose perturbation for robustness experiments."""
    from .geometry import axis_angle_rotation

    w = rng.normal(0.0, rot_sigma, 3) if rot_sigma > 0 else np.zeros(3)
    dt = rng.normal(0.0, pos_sigma, 3) if pos_sigma > 0 else np.zeros(3)
    return CameraPose(rotation=pose.rotation @ axis_angle_rotation(w), position=pose.position + dt)
