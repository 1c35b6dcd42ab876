"""Command-line interface for the annotation pipeline.

Verbs: synth, calibrate-pnp, triangulate, bundle-adjust, reproject,
refine-longrange, eval-reproj, eval-bbox, eval-success, serve. Relative paths
resolve against GAITRIG_DATA_DIR when it is set. Exit codes: 0 success,
2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bundle, evaluate, longrange, pnp, sessionio, synth, triangulate
from .errors import GaitRigError, NumericalError, ValidationError
from .geometry import DEPTH_EPS, project_points, rotation_from_position
from .longrange import GridSpec, NudgeState, nudged_pose
from .sessionio import DetectionFrame, data_dir


def _path(p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else data_dir() / q


def _parse_offsets(text: str | None) -> dict[str, int]:
    if not text:
        return {}
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise ValidationError(f"malformed offsets entry {part!r}, want cam=k")
        cam, val = part.split("=", 1)
        try:
            out[cam.strip()] = int(val)
        except ValueError as e:
            raise ValidationError(f"offset for {cam!r} is not an integer: {val!r}") from e
    return out


def _parse_grid(text: str | None) -> GridSpec:
    if not text:
        return GridSpec()
    vals = [float(x) for x in text.split(",")]
    if len(vals) != 9:
        raise ValidationError(
            "grid spec needs 9 comma-separated numbers: "
            "de_lo,de_hi,de_step,da_lo,da_hi,da_step,dd_lo,dd_hi,dd_step"
        )
    return GridSpec(*vals)


def _load_session(args):
    rig = sessionio.load_rig(_path(args.rig))
    detections = {}
    joints = sessionio.DEFAULT_JOINTS
    for p in args.detections:
        cam_id, joints, _size, frames = sessionio.load_detections(_path(p))
        detections[cam_id] = frames
    offsets = _parse_offsets(getattr(args, "offsets", None))
    session = sessionio.build_session(rig, detections, offsets=offsets, joints=joints)
    return rig, session


def _posed_cameras(rig: sessionio.Rig, only=None):
    cams = rig.posed()
    if only is not None:
        cams = {cid: v for cid, v in cams.items() if cid in only}
    return cams


def cmd_synth(args) -> int:
    out = _path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wspec = synth.WalkerSpec(
        height=args.subject_height,
        duration_s=args.frames / args.fps,
        fps=args.fps,
    )
    rspec = synth.RigSpec(
        close_count=args.cameras,
        perturb_sigma=args.perturb,
        perturb_sigma_long=args.perturb_long,
        perturb_seed=args.seed,
    )
    track = synth.gen_walker(wspec, seed=args.seed)
    rig_truth, rig_init = synth.gen_rig(rspec)
    close_ids = sorted(c for c in rig_truth.cameras if rig_truth.cameras[c].role == "close")
    detections, overlay = synth.render_detections(
        track, rig_truth, noise_sigma=args.noise, dropout=args.dropout, seed=args.seed
    )
    sessionio.save_rig(out / "rig_truth.json", rig_truth)
    sessionio.save_rig(out / "rig_initial.json", rig_init)
    for cid in close_ids:
        sessionio.save_detections(out / f"detections_{cid}.jsonl", cid, detections[cid],
                                  joints=track.joints, image_size=rig_truth.cameras[cid].image_size)
    for cid in sorted(rig_truth.cameras):
        sessionio.save_detections(out / f"overlay_{cid}.jsonl", cid, overlay[cid],
                                  joints=track.joints, image_size=rig_truth.cameras[cid].image_size)
    sessionio.save_track(out / "track_truth.jsonl", track)
    labels = synth.gen_boxes(track, rig_truth, "long", inflate=args.boxes_inflate,
                             frame_step=args.boxes_step)
    sessionio.save_labels(out / "labels_long.jsonl", labels)
    print(f"wrote synthetic session to {out} ({len(track.instances)} instances, "
          f"{len(close_ids)} close cameras + long, {len(labels)} boxes)")
    return 0


def cmd_calibrate_pnp(args) -> int:
    rig = sessionio.load_rig(_path(args.rig))
    cam_id, corrs = sessionio.load_correspondences(_path(args.corrs))
    cam_id = args.camera or cam_id
    if cam_id not in rig.cameras:
        raise ValidationError(f"camera {cam_id!r} not in rig")
    cam = rig.cameras[cam_id]
    pose, residual = pnp.solve_pnp(corrs, cam.intrinsics, reject_outliers=args.reject_outliers)
    rig.cameras[cam_id] = sessionio.RigCamera(
        camera_id=cam_id, intrinsics=cam.intrinsics, image_size=cam.image_size,
        role=cam.role, pose=pose, nudge=cam.nudge,
    )
    sessionio.save_rig(_path(args.out), rig)
    print(f"calibrated {cam_id}: mean residual {residual:.6f} px over {len(corrs)} correspondences")
    return 0


def cmd_triangulate(args) -> int:
    rig, session = _load_session(args)
    cams = _posed_cameras(rig, only=session.streams)
    if args.estimate_offsets:
        offsets = triangulate.estimate_offsets(session, cams)
        session.offsets.update(offsets)
        print("estimated offsets:", " ".join(f"{c}={k}" for c, k in sorted(offsets.items())))
    track = triangulate.triangulate_sequence(session, cams, confidence_floor=args.confidence_floor)
    sessionio.save_track(_path(args.out), track)
    n_pts = sum(len(i.positions) for i in track.instances)
    print(f"triangulated {n_pts} joints over {len(track.instances)} instances -> {args.out}")
    return 0


def cmd_bundle_adjust(args) -> int:
    rig, session = _load_session(args)
    cams = _posed_cameras(rig, only=session.streams)
    track = sessionio.load_track(_path(args.track))
    problem = bundle.build_problem(session, cams, track,
                                   confidence_floor=args.confidence_floor,
                                   fixed_camera_id=args.fixed_camera)
    opts = bundle.BAOptions(extrinsics_only=args.extrinsics_only, huber_delta=args.huber)
    poses, _points, report = bundle.optimize(problem, opts)
    for cid, pose in poses.items():
        cam = rig.cameras[cid]
        rig.cameras[cid] = sessionio.RigCamera(
            camera_id=cid, intrinsics=cam.intrinsics, image_size=cam.image_size,
            role=cam.role, pose=pose, nudge=cam.nudge,
        )
    sessionio.save_rig(_path(args.out), rig)
    if args.report:
        sessionio.save_report(_path(args.report), report.to_dict())
    if args.track_out:
        cams_opt = {cid: (cams[cid][0], poses[cid]) for cid in poses}
        track_opt = triangulate.triangulate_sequence(session, cams_opt,
                                                     confidence_floor=args.confidence_floor)
        sessionio.save_track(_path(args.track_out), track_opt)
    print(
        f"bundle adjustment: mean residual {report.mean_residual_before:.4f} -> "
        f"{report.mean_residual_after:.4f} px in {report.iterations} iterations "
        f"(converged={report.converged}, fixed={report.gauge_camera_id})"
    )
    return 0


def _reprojected_frames(track, intr, pose, t_scale=1.0):
    frames = []
    for i, inst in enumerate(track.instances):
        obs = {}
        if inst.positions:
            names = sorted(inst.positions)
            pts = np.stack([inst.positions[n] for n in names])
            pix, z = project_points(pts, intr, pose)
            for k, name in enumerate(names):
                if z[k] > DEPTH_EPS:
                    obs[name] = (float(pix[k, 0]), float(pix[k, 1]), 1.0)
        frames.append(DetectionFrame(frame_idx=i, t_ms=inst.t_ms, obs=obs))
    return frames


def _effective_pose(cam: sessionio.RigCamera):
    if cam.nudge is not None:
        return nudged_pose(cam.nudge)
    if cam.pose is None:
        raise ValidationError(f"camera {cam.camera_id!r} has no pose")
    return cam.pose


def cmd_reproject(args) -> int:
    rig = sessionio.load_rig(_path(args.rig))
    track = sessionio.load_track(_path(args.track))
    if args.camera not in rig.cameras:
        raise ValidationError(f"camera {args.camera!r} not in rig")
    cam = rig.cameras[args.camera]
    pose = _effective_pose(cam)
    frames = _reprojected_frames(track, cam.intrinsics, pose)
    sessionio.save_detections(_path(args.out), args.camera, frames,
                              joints=track.joints, image_size=cam.image_size)
    n = sum(len(f.obs) for f in frames)
    print(f"reprojected {n} keypoints into {args.camera} -> {args.out}")
    return 0


def cmd_refine_longrange(args) -> int:
    rig = sessionio.load_rig(_path(args.rig))
    track = sessionio.load_track(_path(args.track))
    labels = [b for b in sessionio.load_labels(_path(args.labels)) if b.camera_id == args.camera]
    if args.camera not in rig.cameras:
        raise ValidationError(f"camera {args.camera!r} not in rig")
    cam = rig.cameras[args.camera]
    if cam.nudge is not None:
        state0 = cam.nudge
    else:
        if cam.pose is None:
            raise ValidationError(f"camera {args.camera!r} has neither nudge state nor pose")
        _pose, sph = rotation_from_position(cam.pose.position)
        state0 = NudgeState(base=sph)
    fine_divisor = 1 if args.single_pass else 5
    result = longrange.refine_long_camera(track, labels, cam.intrinsics, state0,
                                          _parse_grid(args.grid), fine_divisor=fine_divisor)
    pose = nudged_pose(result.state)
    rig.cameras[args.camera] = sessionio.RigCamera(
        camera_id=args.camera, intrinsics=cam.intrinsics, image_size=cam.image_size,
        role=cam.role, pose=pose, nudge=result.state,
    )
    sessionio.save_rig(_path(args.out), rig)
    if args.report:
        sessionio.save_report(_path(args.report), {
            "containment": result.containment,
            "n_keypoints": result.n_keypoints,
            "flagged_no_overlap": result.flagged_no_overlap,
            "d_theta_e": result.state.d_theta_e,
            "d_theta_a": result.state.d_theta_a,
            "d_d": result.state.d_d,
        })
    flag = " [no overlap anywhere on the grid]" if result.flagged_no_overlap else ""
    print(
        f"refined {args.camera}: containment {100 * result.containment:.2f}% "
        f"at deltas ({result.state.d_theta_e:+.4f} rad, {result.state.d_theta_a:+.4f} rad, "
        f"{result.state.d_d:+.2f} m){flag}"
    )
    return 0


def cmd_eval_reproj(args) -> int:
    rig, session = _load_session(args)
    cams = _posed_cameras(rig, only=session.streams)
    track = sessionio.load_track(_path(args.track))
    report = evaluate.error_report(session, cams, track, confidence_floor=args.confidence_floor)
    if args.out:
        sessionio.save_report(_path(args.out), report.to_dict())
    print(f"{'camera':<10}{'n':>8}{'mean':>10}{'median':>10}{'p95':>10}{'max':>10}")
    for cid, n, mean, median, p95, mx in report.table():
        print(f"{cid:<10}{n:>8}{mean:>10.4f}{median:>10.4f}{p95:>10.4f}{mx:>10.4f}")
    return 0


def cmd_eval_bbox(args) -> int:
    rig = sessionio.load_rig(_path(args.rig))
    track = sessionio.load_track(_path(args.track))
    labels = [b for b in sessionio.load_labels(_path(args.labels)) if b.camera_id == args.camera]
    cam = rig.cameras.get(args.camera)
    if cam is None:
        raise ValidationError(f"camera {args.camera!r} not in rig")
    pose = _effective_pose(cam)
    keypoints = {}
    for b in labels:
        if b.frame_idx >= len(track.instances):
            raise ValidationError(f"label frame {b.frame_idx} outside track")
        inst = track.instances[b.frame_idx]
        if not inst.positions:
            continue
        pts = np.stack([inst.positions[n] for n in sorted(inst.positions)])
        pix, z = project_points(pts, cam.intrinsics, pose)
        keypoints[(args.camera, b.frame_idx)] = pix[z > DEPTH_EPS]
    stats = evaluate.bbox_containment(keypoints, labels)
    if args.out:
        sessionio.save_report(_path(args.out), stats.to_dict())
    print(f"containment: {100 * stats.fraction:.2f}% ({stats.n_inside}/{stats.n_keypoints} keypoints, "
          f"{len(labels)} labeled frames)")
    return 0


def cmd_eval_success(args) -> int:
    _cam, _joints, _size, frames = sessionio.load_detections(_path(args.detections[0]))
    labels = sessionio.load_labels(_path(args.labels))
    detections = {}
    for f in frames:
        if f.obs:
            detections[(labels[0].camera_id, f.frame_idx)] = np.array(
                [[u, v] for (u, v, _c) in f.obs.values()]
            )
    stats = evaluate.detection_success(detections, labels, threshold=args.threshold)
    if args.out:
        sessionio.save_report(_path(args.out), stats.to_dict())
    print(f"detection success: {100 * stats.rate:.2f}% ({stats.n_success}/{stats.n_frames} frames, "
          f"threshold {args.threshold})")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(
        rig_path=_path(args.rig),
        detection_paths=[_path(p) for p in args.detections],
        track_path=_path(args.track) if args.track else None,
        labels_path=_path(args.labels) if args.labels else None,
        state_path=_path(args.state) if args.state else None,
        assets_dir=_path(args.assets) if args.assets else None,
    )
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaitrig", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic capture session")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=2.0, help="detection pixel noise sigma")
    p.add_argument("--dropout", type=float, default=0.05)
    p.add_argument("--frames", type=int, default=400)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--cameras", type=int, default=3, help="close camera count")
    p.add_argument("--subject-height", type=float, default=1.6)
    p.add_argument("--perturb", type=float, default=0.1, help="close-camera tape error sigma, m")
    p.add_argument("--perturb-long", type=float, default=0.5, help="long-camera tape error sigma, m")
    p.add_argument("--boxes-step", type=int, default=2, help="label every k-th frame")
    p.add_argument("--boxes-inflate", type=float, default=0.10)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate-pnp", help="localize one camera from correspondences")
    p.add_argument("--rig", required=True)
    p.add_argument("--corrs", required=True)
    p.add_argument("--camera", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--reject-outliers", action="store_true")
    p.set_defaults(func=cmd_calibrate_pnp)

    p = sub.add_parser("triangulate", help="triangulate a 3D track from detections")
    p.add_argument("--rig", required=True)
    p.add_argument("--detections", action="append", required=True)
    p.add_argument("--offsets", default=None, help="per-camera frame offsets, cam=k,cam=k")
    p.add_argument("--estimate-offsets", action="store_true")
    p.add_argument("--confidence-floor", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_triangulate)

    p = sub.add_parser("bundle-adjust", help="refine camera extrinsics (and points)")
    p.add_argument("--rig", required=True)
    p.add_argument("--detections", action="append", required=True)
    p.add_argument("--offsets", default=None)
    p.add_argument("--track", required=True, help="initial 3D track")
    p.add_argument("--out", required=True, help="refined rig output")
    p.add_argument("--report", default=None)
    p.add_argument("--track-out", default=None, help="re-triangulate with refined extrinsics")
    p.add_argument("--fixed-camera", default=None)
    p.add_argument("--extrinsics-only", action="store_true")
    p.add_argument("--huber", type=float, default=None)
    p.add_argument("--confidence-floor", type=float, default=0.5)
    p.set_defaults(func=cmd_bundle_adjust)

    p = sub.add_parser("reproject", help="project a 3D track into one camera")
    p.add_argument("--rig", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reproject)

    p = sub.add_parser("refine-longrange", help="grid-search the long camera nudge offsets")
    p.add_argument("--rig", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--camera", default="long")
    p.add_argument("--grid", default=None,
                   help="de_lo,de_hi,de_step,da_lo,da_hi,da_step,dd_lo,dd_hi,dd_step")
    p.add_argument("--single-pass", action="store_true",
                   help="skip the local fine pass after the coarse grid")
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_refine_longrange)

    p = sub.add_parser("eval-reproj", help="reprojection error report")
    p.add_argument("--rig", required=True)
    p.add_argument("--detections", action="append", required=True)
    p.add_argument("--offsets", default=None)
    p.add_argument("--track", required=True)
    p.add_argument("--confidence-floor", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_reproj)

    p = sub.add_parser("eval-bbox", help="keypoint containment in labeled boxes")
    p.add_argument("--rig", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--camera", default="long")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_bbox)

    p = sub.add_parser("eval-success", help="per-frame detection success against boxes")
    p.add_argument("--detections", action="append", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_success)

    p = sub.add_parser("serve", help="run the local annotation service")
    p.add_argument("--rig", required=True)
    p.add_argument("--detections", action="append", required=True)
    p.add_argument("--track", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--state", default=None)
    p.add_argument("--assets", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8077)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except GaitRigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
