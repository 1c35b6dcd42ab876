"""Multi-camera rig toolkit for 2D-3D-2D gait keypoint annotation."""

from . import bundle, errors, evaluate, geometry, longrange, pnp, sessionio, synth, triangulate
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    Ray,
    SphericalExtrinsic,
    apply_distortion,
    look_at,
    pixel_ray,
    project,
    rotation_from_position,
)
from .longrange import GridSpec, NudgeState, grid_refine, nudged_pose, refine_long_camera
from .pnp import refine_pose, solve_pnp
from .sessionio import CaptureSession, Correspondence, Rig, RigCamera, SkeletonTrack3D, align_frames
from .triangulate import JointObservation, triangulate_joint, triangulate_rays, triangulate_sequence

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "Ray",
    "SphericalExtrinsic",
    "apply_distortion",
    "look_at",
    "pixel_ray",
    "project",
    "rotation_from_position",
    "GridSpec",
    "NudgeState",
    "grid_refine",
    "nudged_pose",
    "refine_long_camera",
    "refine_pose",
    "solve_pnp",
    "CaptureSession",
    "Correspondence",
    "Rig",
    "RigCamera",
    "SkeletonTrack3D",
    "align_frames",
    "JointObservation",
    "triangulate_joint",
    "triangulate_rays",
    "triangulate_sequence",
    "bundle",
    "errors",
    "evaluate",
    "geometry",
    "longrange",
    "pnp",
    "sessionio",
    "synth",
    "triangulate",
    "__version__",
]
