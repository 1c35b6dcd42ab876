"""Local HTTP service backing the annotation UI.

Serves one capture session: frame detections, correspondence clicking, PnP
solves, asynchronous bundle adjustment, long-range nudging with live
containment, box labeling, and metrics. All numbers returned over HTTP come
straight from the library calls; the service adds no arithmetic. Mutations
are serialized behind a single lock, each bumps a revision counter, and the
whole annotation state autosaves to the state file after every mutation, so
re-serving the file reproduces correspondences, poses, nudges, and labels.

It is a single-session lab tool: loopback by default, no auth.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import bundle, evaluate, pnp, sessionio, triangulate
from .errors import GaitRigError
from .evaluate import BoxLabel
from .geometry import DEPTH_EPS, CameraPose, project_points, rotation_from_position
from .longrange import NudgeState, nudged_pose
from .sessionio import (
    Correspondence,
    Rig,
    SCHEMA_VERSION,
    _nudge_from_dict,
    _nudge_to_dict,
    _pose_from_dict,
    _pose_to_dict,
)

STATE_SCHEMA = "gaitrig/session-state"


@dataclass
class ServiceConfig:
    rig_path: Path
    detection_paths: list[Path]
    track_path: Path | None = None
    labels_path: Path | None = None
    state_path: Path | None = None
    assets_dir: Path | None = None
    confidence_floor: float = 0.5


@dataclass
class ServiceState:
    config: ServiceConfig
    rig: Rig
    session: sessionio.CaptureSession
    track: sessionio.SkeletonTrack3D | None
    track_is_reference: bool
    poses: dict[str, CameraPose]
    correspondences: dict[str, dict[str, Correspondence]] = field(default_factory=dict)
    nudge: NudgeState | None = None
    labels: dict[tuple[str, int], BoxLabel] = field(default_factory=dict)
    revision: int = 0
    undo_log: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    jobs: dict[str, dict] = field(default_factory=dict)
    job_counter: int = 0


class CorrespondenceBody(BaseModel):
    marker_id: str
    u: float
    v: float
    frame_idx: int
    revision: int | None = None


class NudgeBody(BaseModel):
    d_theta_e: float
    d_theta_a: float
    d_d: float
    revision: int | None = None


class LabelBody(BaseModel):
    rect: list[float]
    revision: int | None = None


class BARequest(BaseModel):
    extrinsics_only: bool = False
    huber_delta: float | None = None
    revision: int | None = None


def _error(status: int, kind: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"kind": kind, "message": message})


def _guard(exc: GaitRigError) -> HTTPException:
    return _error(422, type(exc).__name__, str(exc))


def load_state(state: ServiceState, path: Path) -> None:
    doc = json.loads(path.read_text())
    if doc.get("schema") != STATE_SCHEMA:
        raise sessionio.ParseError(f"{path}: not a session-state file")
    if doc.get("version", [0])[0] != SCHEMA_VERSION[0]:
        raise sessionio.SchemaVersionMismatch(f"{path}: unsupported state version")
    for cam_id, items in doc.get("correspondences", {}).items():
        store = state.correspondences.setdefault(cam_id, {})
        for it in items:
            store[it["marker_id"]] = Correspondence(
                marker_id=it["marker_id"],
                world=np.array(it["world"], dtype=float),
                image=np.array(it["image"], dtype=float),
                frame_idx=int(it["frame"]),
            )
    for cam_id, pd in doc.get("poses", {}).items():
        state.poses[cam_id] = _pose_from_dict(pd, path)
    if doc.get("nudge") is not None:
        state.nudge = _nudge_from_dict(doc["nudge"], path)
    for it in doc.get("labels", []):
        b = BoxLabel(camera_id=it["camera"], frame_idx=int(it["frame"]),
                     rect=tuple(float(x) for x in it["rect"]))
        state.labels[(b.camera_id, b.frame_idx)] = b
    state.revision = int(doc.get("revision", 0))


def save_state(state: ServiceState) -> None:
    if state.config.state_path is None:
        return
    doc = {
        "schema": STATE_SCHEMA,
        "version": list(SCHEMA_VERSION),
        "revision": state.revision,
        "correspondences": {
            cam: [
                {
                    "marker_id": c.marker_id,
                    "world": [float(x) for x in c.world],
                    "image": [float(x) for x in c.image],
                    "frame": c.frame_idx,
                }
                for _mid, c in sorted(store.items())
            ]
            for cam, store in sorted(state.correspondences.items())
            if store
        },
        "poses": {cam: _pose_to_dict(p) for cam, p in sorted(state.poses.items())},
        "nudge": _nudge_to_dict(state.nudge) if state.nudge is not None else None,
        "labels": [
            {"camera": b.camera_id, "frame": b.frame_idx, "rect": list(b.rect)}
            for (_c, _f), b in sorted(state.labels.items())
        ],
    }
    state.config.state_path.write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def build_state(config: ServiceConfig) -> ServiceState:
    rig = sessionio.load_rig(config.rig_path)
    detections = {}
    joints = sessionio.DEFAULT_JOINTS
    for p in config.detection_paths:
        cam_id, joints, _size, frames = sessionio.load_detections(p)
        detections[cam_id] = frames
    session = sessionio.build_session(rig, detections, joints=joints)
    track = sessionio.load_track(config.track_path) if config.track_path else None
    poses = {cid: cam.pose for cid, cam in rig.cameras.items() if cam.pose is not None}
    nudge = next((c.nudge for c in rig.cameras.values() if c.nudge is not None), None)
    state = ServiceState(
        config=config,
        rig=rig,
        session=session,
        track=track,
        track_is_reference=config.track_path is not None,
        poses=poses,
        nudge=nudge,
    )
    if config.labels_path and Path(config.labels_path).exists():
        for b in sessionio.load_labels(config.labels_path):
            state.labels[(b.camera_id, b.frame_idx)] = b
    if config.state_path and Path(config.state_path).exists():
        load_state(state, Path(config.state_path))
    return state


def _long_camera_id(state: ServiceState) -> str | None:
    for cid in sorted(state.rig.cameras):
        if state.rig.cameras[cid].role == "long":
            return cid
    return None


def _effective_pose(state: ServiceState, cam_id: str) -> CameraPose:
    cam = state.rig.cameras[cam_id]
    if cam.role == "long" and state.nudge is not None:
        return nudged_pose(state.nudge)
    pose = state.poses.get(cam_id)
    if pose is None:
        raise _error(422, "MissingPose", f"camera {cam_id!r} is not calibrated yet")
    return pose


def _reproject_instance(state: ServiceState, cam_id: str, idx: int) -> dict:
    if state.track is None:
        raise _error(422, "NoTrack", "no 3D track available")
    if idx < 0 or idx >= len(state.track.instances):
        raise _error(404, "UnknownFrame", f"track has {len(state.track.instances)} instances")
    inst = state.track.instances[idx]
    cam = state.rig.cameras[cam_id]
    pose = _effective_pose(state, cam_id)
    out = {}
    if inst.positions:
        names = sorted(inst.positions)
        pts = np.stack([inst.positions[n] for n in names])
        pix, z = project_points(pts, cam.intrinsics, pose)
        for k, name in enumerate(names):
            if z[k] > DEPTH_EPS:
                out[name] = [float(pix[k, 0]), float(pix[k, 1])]
    return {"camera": cam_id, "frame": idx, "joints": out}


def _containment(state: ServiceState, nudge: NudgeState | None):
    long_id = _long_camera_id(state)
    if long_id is None or state.track is None or nudge is None:
        return None
    labels = [b for b in state.labels.values() if b.camera_id == long_id]
    if not labels:
        return None
    cam = state.rig.cameras[long_id]
    pose = nudged_pose(nudge)
    keypoints = {}
    for b in labels:
        if b.frame_idx >= len(state.track.instances):
            continue
        inst = state.track.instances[b.frame_idx]
        if not inst.positions:
            continue
        pts = np.stack([inst.positions[n] for n in sorted(inst.positions)])
        pix, z = project_points(pts, cam.intrinsics, pose)
        keypoints[(long_id, b.frame_idx)] = pix[z > DEPTH_EPS]
    if not keypoints:
        return None
    stats = evaluate.bbox_containment(keypoints, labels)
    return {"fraction": stats.fraction, "n_inside": stats.n_inside,
            "n_keypoints": stats.n_keypoints, "n_frames": len(labels)}


def _check_revision(state: ServiceState, revision: int | None):
    if revision is not None and revision != state.revision:
        raise _error(409, "RevisionConflict",
                     f"request made against revision {revision}, current is {state.revision}")


def _mutated(state: ServiceState, event: dict):
    state.revision += 1
    state.undo_log.append(event)
    save_state(state)


def create_app(config: ServiceConfig) -> FastAPI:
    state = build_state(config)
    app = FastAPI(title="gaitrig annotation service")
    app.state.gaitrig = state

    if config.assets_dir is not None and Path(config.assets_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/assets", StaticFiles(directory=str(config.assets_dir)), name="assets")

    def camera_or_404(cam_id: str):
        if cam_id not in state.rig.cameras:
            raise _error(404, "UnknownCamera", f"no camera {cam_id!r}")
        return state.rig.cameras[cam_id]

    @app.get("/session")
    def session_summary():
        with state.lock:
            cams = []
            for cid in sorted(state.rig.cameras):
                cam = state.rig.cameras[cid]
                cams.append({
                    "id": cid,
                    "role": cam.role,
                    "image_size": list(cam.image_size),
                    "n_frames": len(state.session.streams.get(cid, [])),
                    "calibrated": cid in state.poses,
                    "n_correspondences": len(state.correspondences.get(cid, {})),
                })
            return {
                "cameras": cams,
                "joints": list(state.session.joints),
                "track_len": len(state.track.instances) if state.track else 0,
                "n_labels": len(state.labels),
                "nudge": _nudge_to_dict(state.nudge) if state.nudge else None,
                "revision": state.revision,
                "undo_log_len": len(state.undo_log),
            }

    @app.get("/frames/{cam_id}/{idx}")
    def get_frame(cam_id: str, idx: int):
        camera_or_404(cam_id)
        with state.lock:
            stream = state.session.streams.get(cam_id, [])
            frame = next((f for f in stream if f.frame_idx == idx), None)
            if frame is None:
                # cameras without detections (the long view) still expose their
                # frames for labeling, as long as the index is in session range
                n = len(state.track.instances) if state.track else 0
                n = max(n, max((len(s) for s in state.session.streams.values()), default=0))
                if stream or not (0 <= idx < n):
                    raise _error(404, "UnknownFrame", f"camera {cam_id!r} has no frame {idx}")
                t_ref = state.track.instances[idx].t_ms if state.track and idx < len(
                    state.track.instances) else float(idx)
                frame = sessionio.DetectionFrame(frame_idx=idx, t_ms=t_ref, obs={})
            image_url = None
            if config.assets_dir is not None:
                rel = Path(cam_id) / f"{idx:06d}.png"
                if (Path(config.assets_dir) / rel).exists():
                    image_url = f"/assets/{rel.as_posix()}"
            label = state.labels.get((cam_id, idx))
            return {
                "camera": cam_id,
                "frame": frame.frame_idx,
                "t_ms": frame.t_ms,
                "detections": {n: list(t) for n, t in sorted(frame.obs.items())},
                "label": list(label.rect) if label else None,
                "image_url": image_url,
            }

    @app.post("/correspondences/{cam_id}")
    def post_correspondence(cam_id: str, body: CorrespondenceBody):
        camera_or_404(cam_id)
        with state.lock:
            _check_revision(state, body.revision)
            if state.track is None:
                raise _error(422, "NoTrack", "no 3D reference track to resolve markers against")
            if body.frame_idx < 0 or body.frame_idx >= len(state.track.instances):
                raise _error(422, "UnknownFrame", f"frame {body.frame_idx} outside track")
            if not (math.isfinite(body.u) and math.isfinite(body.v)):
                raise _error(422, "BadPixel", "pixel coordinates must be finite")
            inst = state.track.instances[body.frame_idx]
            world = inst.positions.get(body.marker_id)
            if world is None:
                raise _error(422, "UnknownMarker",
                             f"marker {body.marker_id!r} has no 3D position at frame {body.frame_idx}")
            corr = Correspondence(marker_id=body.marker_id, world=world,
                                  image=np.array([body.u, body.v]), frame_idx=body.frame_idx)
            state.correspondences.setdefault(cam_id, {})[body.marker_id] = corr
            _mutated(state, {"op": "add_correspondence", "camera": cam_id, "marker": body.marker_id})
            return {"camera": cam_id, "count": len(state.correspondences[cam_id]),
                    "revision": state.revision}

    @app.delete("/correspondences/{cam_id}/{marker_id}")
    def delete_correspondence(cam_id: str, marker_id: str):
        camera_or_404(cam_id)
        with state.lock:
            store = state.correspondences.get(cam_id, {})
            if marker_id not in store:
                raise _error(404, "UnknownMarker", f"no correspondence for {marker_id!r}")
            del store[marker_id]
            _mutated(state, {"op": "delete_correspondence", "camera": cam_id, "marker": marker_id})
            return {"camera": cam_id, "count": len(store), "revision": state.revision}

    @app.post("/solve/pnp/{cam_id}")
    def solve_pnp_endpoint(cam_id: str):
        cam = camera_or_404(cam_id)
        with state.lock:
            corrs = list(state.correspondences.get(cam_id, {}).values())
            try:
                pose, residual = pnp.solve_pnp(corrs, cam.intrinsics)
            except GaitRigError as e:
                raise _guard(e) from e
            state.poses[cam_id] = pose
            _mutated(state, {"op": "solve_pnp", "camera": cam_id})
            return {
                "camera": cam_id,
                "pose": _pose_to_dict(pose),
                "mean_residual_px": residual,
                "n_correspondences": len(corrs),
                "revision": state.revision,
            }

    @app.post("/solve/ba")
    def solve_ba(body: BARequest):
        with state.lock:
            _check_revision(state, body.revision)
            cams = {}
            for cid in state.session.streams:
                if cid not in state.poses:
                    raise _error(422, "MissingInitialPose", f"camera {cid!r} not calibrated")
                cams[cid] = (state.rig.cameras[cid].intrinsics, state.poses[cid])
            if state.track is None:
                track0 = triangulate.triangulate_sequence(
                    state.session, cams, confidence_floor=config.confidence_floor)
            else:
                track0 = state.track
            state.job_counter += 1
            job_id = f"job-{state.job_counter}"
            job = {"id": job_id, "status": "queued", "progress": {"iteration": 0, "cost": None},
                   "result": None, "error": None}
            state.jobs[job_id] = job

        def run():
            job["status"] = "running"
            try:
                def progress(iteration, cost):
                    job["progress"] = {"iteration": iteration, "cost": cost}

                problem = bundle.build_problem(state.session, cams, track0,
                                               confidence_floor=config.confidence_floor)
                opts = bundle.BAOptions(extrinsics_only=body.extrinsics_only,
                                        huber_delta=body.huber_delta,
                                        progress_callback=progress)
                poses, _points, report = bundle.optimize(problem, opts)
                with state.lock:
                    state.poses.update(poses)
                    if not state.track_is_reference:
                        cams_opt = {cid: (cams[cid][0], poses[cid]) for cid in poses}
                        state.track = triangulate.triangulate_sequence(
                            state.session, cams_opt, confidence_floor=config.confidence_floor)
                    _mutated(state, {"op": "solve_ba"})
                job["result"] = report.to_dict()
                job["status"] = "done"
            except GaitRigError as e:
                job["error"] = {"kind": type(e).__name__, "message": str(e)}
                job["status"] = "error"

        threading.Thread(target=run, daemon=True).start()
        return {"job_id": job_id, "poll": f"/jobs/{job_id}"}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise _error(404, "UnknownJob", f"no job {job_id!r}")
        return job

    @app.post("/longrange/nudge")
    def nudge(body: NudgeBody):
        with state.lock:
            _check_revision(state, body.revision)
            long_id = _long_camera_id(state)
            if long_id is None:
                raise _error(422, "NoLongCamera", "rig has no long-range camera")
            base = state.nudge
            if base is None:
                pose = state.poses.get(long_id)
                if pose is None:
                    raise _error(422, "MissingPose", "long camera has no pose or nudge base")
                _p, sph = rotation_from_position(pose.position)
                base = NudgeState(base=sph)
            try:
                new_state = NudgeState(base=base.base, d_theta_e=body.d_theta_e,
                                       d_theta_a=body.d_theta_a, d_d=body.d_d,
                                       placement_axis=base.placement_axis)
            except GaitRigError as e:
                raise _guard(e) from e
            state.nudge = new_state
            state.poses[long_id] = nudged_pose(new_state)
            _mutated(state, {"op": "nudge"})
            return {
                "nudge": _nudge_to_dict(new_state),
                "containment": _containment(state, new_state),
                "revision": state.revision,
            }

    @app.get("/reproject/{cam_id}/{idx}")
    def reproject(cam_id: str, idx: int):
        camera_or_404(cam_id)
        with state.lock:
            return _reproject_instance(state, cam_id, idx)

    @app.post("/labels/{cam_id}/{idx}")
    def post_label(cam_id: str, idx: int, body: LabelBody):
        camera_or_404(cam_id)
        with state.lock:
            _check_revision(state, body.revision)
            if len(body.rect) != 4:
                raise _error(422, "BadRect", "rect must be [u_min, v_min, u_max, v_max]")
            try:
                label = BoxLabel(camera_id=cam_id, frame_idx=idx, rect=tuple(body.rect))
            except GaitRigError as e:
                raise _guard(e) from e
            state.labels[(cam_id, idx)] = label
            _mutated(state, {"op": "add_label", "camera": cam_id, "frame": idx})
            return {"camera": cam_id, "frame": idx, "n_labels": len(state.labels),
                    "revision": state.revision}

    @app.delete("/labels/{cam_id}/{idx}")
    def delete_label(cam_id: str, idx: int):
        camera_or_404(cam_id)
        with state.lock:
            if (cam_id, idx) not in state.labels:
                raise _error(404, "UnknownLabel", f"no label for {cam_id!r} frame {idx}")
            del state.labels[(cam_id, idx)]
            _mutated(state, {"op": "delete_label", "camera": cam_id, "frame": idx})
            return {"camera": cam_id, "frame": idx, "n_labels": len(state.labels),
                    "revision": state.revision}

    @app.get("/metrics")
    def metrics():
        with state.lock:
            out = {"reprojection": None, "containment": _containment(state, state.nudge),
                   "revision": state.revision}
            if state.track is not None:
                cams = {
                    cid: (state.rig.cameras[cid].intrinsics, state.poses[cid])
                    for cid in state.session.streams
                    if cid in state.poses
                }
                if cams:
                    try:
                        report = evaluate.error_report(
                            state.session, cams, state.track,
                            confidence_floor=config.confidence_floor)
                        out["reprojection"] = report.to_dict()
                    except GaitRigError:
                        pass
            return out

    return app
