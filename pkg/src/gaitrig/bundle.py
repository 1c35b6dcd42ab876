"""Bundle adjustment: joint refinement of camera extrinsics and 3D points.

Levenberg-Marquardt over axis-angle pose increments and point coordinates,
minimizing confidence-weighted squared reprojection error. The normal
equations exploit the camera/point block sparsity through a Schur complement
on the point blocks, reducing each solve to the camera system. Gauge freedom
is removed by holding one camera fixed and softly pinning a second camera's
distance to the world origin (the scene scale is otherwise free).
Intrinsics are never optimized.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import Divergence, MissingInitialPose, NumericalFailure, ValidationError
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    axis_angle_rotation,
    project_jacobian,
    project_points,
)
from .sessionio import CaptureSession, SkeletonTrack3D, align_frames

DEFAULT_CONFIDENCE_FLOOR = 0.5
SCALE_PRIOR_WEIGHT = 1e4

_RawPose = namedtuple("_RawPose", ["rotation", "position"])


@dataclass(frozen=True)
class BAObservation:
    camera_id: str
    point_id: str
    pixel: np.ndarray
    weight: float = 1.0


@dataclass(frozen=True)
class BACamera:
    camera_id: str
    intrinsics: CameraIntrinsics
    pose: CameraPose
    fixed: bool = False


@dataclass
class BAProblem:
    cameras: list[BACamera]
    points: list[tuple[str, np.ndarray]]
    observations: list[BAObservation]
    gauge_camera_id: str
    gauge_auto_fixed: bool = False
    scale_camera_id: str | None = None
    scale_prior_weight: float = SCALE_PRIOR_WEIGHT

    def __post_init__(self):
        cam_ids = {c.camera_id for c in self.cameras}
        pt_ids = {pid for pid, _ in self.points}
        for o in self.observations:
            if o.camera_id not in cam_ids:
                raise ValidationError(f"observation references unknown camera {o.camera_id!r}")
            if o.point_id not in pt_ids:
                raise ValidationError(f"observation references unknown point {o.point_id!r}")
        if not any(c.fixed for c in self.cameras):
            raise ValidationError("at least one camera must be fixed to pin the gauge")
        self.observations = sorted(self.observations, key=lambda o: (o.camera_id, o.point_id))


@dataclass
class BAOptions:
    max_iterations: int = 200
    rel_cost_tol: float = 1e-10
    grad_tol: float = 1e-10
    lambda0: float = 1e-4
    lambda_max: float = 1e12
    huber_delta: float | None = None
    extrinsics_only: bool = False
    use_schur: bool = True
    progress_callback: Callable[[int, float], None] | None = None


@dataclass
class BAReport:
    initial_cost: float
    final_cost: float
    cost_history: list[float] = field(default_factory=list)
    mean_residual_before: float = 0.0
    mean_residual_after: float = 0.0
    iterations: int = 0
    converged: bool = False
    gauge_camera_id: str = ""
    gauge_auto_fixed: bool = False

    def to_dict(self) -> dict:
        return {
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "cost_history": list(self.cost_history),
            "mean_residual_before": self.mean_residual_before,
            "mean_residual_after": self.mean_residual_after,
            "iterations": self.iterations,
            "converged": self.converged,
            "gauge_camera_id": self.gauge_camera_id,
            "gauge_auto_fixed": self.gauge_auto_fixed,
        }


def point_id_for(instance_idx: int, joint: str) -> str:
    return f"{instance_idx:06d}:{joint}"


def build_problem(
    session: CaptureSession,
    cameras_initial: Mapping[str, tuple[CameraIntrinsics, CameraPose]],
    track_initial: SkeletonTrack3D,
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
    fixed_camera_id: str | None = None,
    scale_camera_id: str | None = None,
) -> BAProblem:
    """One observation per (camera, joint, instance) detection above the
    confidence floor, one variable point per triangulated (instance, joint).

    Points left with fewer than two observations are dropped (they would be
    unconstrained along their ray). Without an explicit fixed camera the
    first camera (sorted by id) is fixed and recorded in the report.
    """
    instances = align_frames(session)
    if len(track_initial.instances) != len(instances):
        raise ValidationError(
            f"track has {len(track_initial.instances)} instances, session aligns to {len(instances)}"
        )
    cam_ids = sorted(session.streams)
    for cid in cam_ids:
        if cid not in cameras_initial:
            raise MissingInitialPose(f"camera {cid!r} has detections but no initial pose")

    auto = fixed_camera_id is None
    fixed_id = fixed_camera_id if fixed_camera_id is not None else cam_ids[0]
    if fixed_id not in cameras_initial:
        raise MissingInitialPose(f"fixed camera {fixed_id!r} has no initial pose")
    if scale_camera_id is None:
        others = [c for c in cam_ids if c != fixed_id]
        scale_camera_id = others[0] if others else None

    points: list[tuple[str, np.ndarray]] = []
    observations: list[BAObservation] = []
    for i, inst in enumerate(instances):
        track_inst = track_initial.instances[i]
        for joint in sorted(track_inst.positions):
            pid = point_id_for(i, joint)
            obs_here = []
            for cid in cam_ids:
                triple = inst.frames[cid].obs.get(joint)
                if triple is None:
                    continue
                u, v, conf = triple
                if conf < confidence_floor:
                    continue
                obs_here.append(BAObservation(camera_id=cid, point_id=pid, pixel=np.array([u, v]), weight=conf))
            if len(obs_here) >= 2:
                points.append((pid, np.array(track_inst.positions[joint], dtype=float)))
                observations.extend(obs_here)

    cameras = [
        BACamera(camera_id=cid, intrinsics=cameras_initial[cid][0], pose=cameras_initial[cid][1],
                 fixed=(cid == fixed_id))
        for cid in cam_ids
    ]
    return BAProblem(
        cameras=cameras,
        points=points,
        observations=observations,
        gauge_camera_id=fixed_id,
        gauge_auto_fixed=auto,
        scale_camera_id=scale_camera_id,
    )


def compute_residuals(
    problem: BAProblem,
    cameras: Mapping[str, CameraPose],
    points: Mapping[str, np.ndarray],
) -> np.ndarray:
    """Unweighted residuals (observed − projected), shape (N, 2), in the
    problem's deterministic observation order (camera id, point id)."""
    intr_by_id = {c.camera_id: c.intrinsics for c in problem.cameras}
    out = np.zeros((len(problem.observations), 2))
    for k, o in enumerate(problem.observations):
        pix, _z = project_points(points[o.point_id].reshape(1, 3), intr_by_id[o.camera_id], cameras[o.camera_id])
        out[k] = o.pixel - pix[0]
    return out


class _State:
    """Mutable optimization state: raw rotation/position arrays plus points."""

    def __init__(self, problem: BAProblem):
        self.cam_ids = [c.camera_id for c in problem.cameras]
        self.R = [np.array(c.pose.rotation) for c in problem.cameras]
        self.t = [np.array(c.pose.position) for c in problem.cameras]
        self.P = np.stack([p for _pid, p in problem.points]) if problem.points else np.zeros((0, 3))

    def copy_from(self, other: "_State"):
        self.R = [r.copy() for r in other.R]
        self.t = [t.copy() for t in other.t]
        self.P = other.P.copy()


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _s, Vt = np.linalg.svd(R)
    return U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt


def optimize(problem: BAProblem, opts: BAOptions | None = None):
    """Run LM to convergence; returns (poses by id, points by id, report).

    The fixed camera's pose object is returned unchanged. Termination: relative
    cost change < rel_cost_tol, gradient infinity norm < grad_tol, or the
    iteration cap. Divergence is raised when damping exceeds lambda_max with
    no accepted step, NumericalFailure on non-finite cost.
    """
    opts = opts or BAOptions()
    n_cams = len(problem.cameras)
    n_pts = len(problem.points)
    cam_index = {c.camera_id: i for i, c in enumerate(problem.cameras)}
    pt_index = {pid: i for i, (pid, _p) in enumerate(problem.points)}
    free_cams = [i for i, c in enumerate(problem.cameras) if not c.fixed]
    free_pos = {ci: k for k, ci in enumerate(free_cams)}
    nf = len(free_cams)

    obs_cam = np.array([cam_index[o.camera_id] for o in problem.observations], dtype=int)
    obs_pt = np.array([pt_index[o.point_id] for o in problem.observations], dtype=int)
    obs_uv = (
        np.stack([o.pixel for o in problem.observations])
        if problem.observations
        else np.zeros((0, 2))
    )
    obs_w = np.array([o.weight for o in problem.observations])
    sw = np.sqrt(obs_w)
    intrs = [c.intrinsics for c in problem.cameras]

    scale_ci = cam_index.get(problem.scale_camera_id) if problem.scale_camera_id else None
    if scale_ci is not None and problem.cameras[scale_ci].fixed:
        scale_ci = None
    scale_ref = float(np.linalg.norm(problem.cameras[scale_ci].pose.position)) if scale_ci is not None else 0.0
    sps = np.sqrt(problem.scale_prior_weight)

    state = _State(problem)

    def residuals(st: _State):
        """Weighted residual rows per observation plus the scale prior term."""
        r = np.zeros((len(obs_cam), 2))
        for ci in range(n_cams):
            mask = obs_cam == ci
            if not mask.any():
                continue
            pix, z = project_points(st.P[obs_pt[mask]], intrs[ci], _RawPose(st.R[ci], st.t[ci]))
            if np.any(z <= 0):
                return None, None
            r[mask] = obs_uv[mask] - pix
        r_scale = 0.0
        if scale_ci is not None:
            r_scale = sps * (np.linalg.norm(st.t[scale_ci]) - scale_ref)
        return r, r_scale

    def cost_of(r, r_scale, hw):
        c = float(np.sum((r * hw[:, None] * sw[:, None]) ** 2))
        if scale_ci is not None:
            c += float(r_scale**2)
        return c

    def huber_weights(r):
        if opts.huber_delta is None:
            return np.ones(len(r))
        norms = np.linalg.norm(r, axis=1)
        w = np.ones(len(r))
        over = norms > opts.huber_delta
        w[over] = np.sqrt(opts.huber_delta / norms[over])
        return w

    r, r_scale = residuals(state)
    if r is None:
        raise NumericalFailure("initial state projects points at or behind a camera")
    hw = huber_weights(r)
    cost = cost_of(r, r_scale, hw)
    if not np.isfinite(cost):
        raise NumericalFailure("initial cost is not finite")
    mean_before = float(np.mean(np.linalg.norm(r, axis=1))) if len(r) else 0.0

    report = BAReport(
        initial_cost=cost,
        final_cost=cost,
        cost_history=[cost],
        mean_residual_before=mean_before,
        gauge_camera_id=problem.gauge_camera_id,
        gauge_auto_fixed=problem.gauge_auto_fixed,
    )

    lam = opts.lambda0
    converged = False
    trial = _State(problem)

    for iteration in range(opts.max_iterations):
        # linearize at the current state
        Jc = np.zeros((len(obs_cam), 2, 6))
        Jp = np.zeros((len(obs_cam), 2, 3))
        for ci in range(n_cams):
            mask = obs_cam == ci
            if not mask.any():
                continue
            pose = _RawPose(state.R[ci], state.t[ci])
            _pix, _z, dpix_dxc, dxc_drot, dxc_dpos = project_jacobian(state.P[obs_pt[mask]], intrs[ci], pose)
            if not problem.cameras[ci].fixed:
                Jc[mask, :, :3] = -np.einsum("nij,njk->nik", dpix_dxc, dxc_drot)
                Jc[mask, :, 3:] = -np.einsum("nij,jk->nik", dpix_dxc, dxc_dpos)
            Jp[mask] = -np.einsum("nij,jk->nik", dpix_dxc, -dxc_dpos)

        scale = (hw * sw)[:, None, None]
        Jc_w = Jc * scale
        Jp_w = Jp * scale
        r_w = r * (hw * sw)[:, None]

        # gradient g = Jᵀ r (free camera blocks and point blocks)
        g_c = np.zeros((nf, 6))
        g_p = np.zeros((n_pts, 3))
        gJr_c = np.einsum("nri,nr->ni", Jc_w, r_w)
        gJr_p = np.einsum("nri,nr->ni", Jp_w, r_w)
        for k, ci in enumerate(free_cams):
            mask = obs_cam == ci
            g_c[k] = gJr_c[mask].sum(axis=0)
        for comp in range(3):
            g_p[:, comp] = np.bincount(obs_pt, weights=gJr_p[:, comp], minlength=n_pts)

        if scale_ci is not None and not problem.cameras[scale_ci].fixed:
            tnorm = np.linalg.norm(state.t[scale_ci])
            if tnorm > 0:
                j_scale = sps * state.t[scale_ci] / tnorm
                g_c[free_pos[scale_ci], 3:] += j_scale * r_scale

        grad_inf = 0.0
        if nf:
            grad_inf = max(grad_inf, float(np.max(np.abs(g_c))))
        if n_pts and not opts.extrinsics_only:
            grad_inf = max(grad_inf, float(np.max(np.abs(g_p))))
        if grad_inf < opts.grad_tol:
            converged = True
            report.iterations = iteration
            break

        # normal-equation blocks
        U = np.zeros((nf, 6, 6))
        UtJ = np.einsum("nri,nrj->nij", Jc_w, Jc_w)
        for k, ci in enumerate(free_cams):
            mask = obs_cam == ci
            U[k] = UtJ[mask].sum(axis=0)
        if scale_ci is not None and not problem.cameras[scale_ci].fixed:
            tnorm = np.linalg.norm(state.t[scale_ci])
            if tnorm > 0:
                j_scale = sps * state.t[scale_ci] / tnorm
                U[free_pos[scale_ci], 3:, 3:] += np.outer(j_scale, j_scale)

        V = np.zeros((n_pts, 3, 3))
        VtJ = np.einsum("nri,nrj->nij", Jp_w, Jp_w).reshape(len(obs_cam), 9)
        for comp in range(9):
            V[:, comp // 3, comp % 3] = np.bincount(obs_pt, weights=VtJ[:, comp], minlength=n_pts)
        W = np.einsum("nri,nrj->nij", Jc_w, Jp_w)  # (N, 6, 3); rows of fixed cameras are zero

        accepted = False
        while lam <= opts.lambda_max:
            try:
                delta_c, delta_p = _solve_step(
                    U, V, W, g_c, g_p, lam, obs_cam, obs_pt, free_cams, free_pos, opts
                )
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue

            trial.copy_from(state)
            for k, ci in enumerate(free_cams):
                trial.R[ci] = state.R[ci] @ axis_angle_rotation(delta_c[k, :3])
                trial.t[ci] = state.t[ci] + delta_c[k, 3:]
            if not opts.extrinsics_only and n_pts:
                trial.P = state.P + delta_p

            r_new, r_scale_new = residuals(trial)
            if r_new is None:
                lam *= 10.0
                continue
            new_cost = cost_of(r_new, r_scale_new, hw)
            if not np.isfinite(new_cost):
                raise NumericalFailure("cost became non-finite during optimization")
            if new_cost < cost:
                rel = (cost - new_cost) / max(cost, 1e-300)
                state.copy_from(trial)
                r, r_scale = r_new, r_scale_new
                cost = new_cost
                report.cost_history.append(cost)
                if opts.progress_callback:
                    opts.progress_callback(iteration + 1, cost)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                hw = huber_weights(r)
                if rel < opts.rel_cost_tol:
                    converged = True
                break
            lam *= 10.0

        report.iterations = iteration + 1
        if converged:
            break
        if not accepted:
            if len(report.cost_history) > 1 or cost < 1e-20:
                converged = True  # no further reduction possible at max damping
                break
            raise Divergence("damping exceeded the maximum without an accepted step")

    poses = {}
    for i, c in enumerate(problem.cameras):
        if c.fixed:
            poses[c.camera_id] = c.pose
        else:
            poses[c.camera_id] = CameraPose(rotation=_orthonormalize(state.R[i]), position=state.t[i])
    points = {pid: state.P[k].copy() for k, (pid, _p) in enumerate(problem.points)}

    report.final_cost = cost
    report.converged = converged
    report.mean_residual_after = float(np.mean(np.linalg.norm(r, axis=1))) if len(r) else 0.0
    return poses, points, report


def _solve_step(U, V, W, g_c, g_p, lam, obs_cam, obs_pt, free_cams, free_pos, opts: BAOptions):
    """One damped normal-equation solve, via Schur elimination of the point
    blocks or the equivalent dense system."""
    nf = len(free_cams)
    n_pts = len(V)

    def damped(M):
        out = M.copy()
        k = M.shape[-1]
        idx = np.arange(k)
        out[..., idx, idx] += lam * np.maximum(M[..., idx, idx], 1e-12)
        return out

    U_d = damped(U)

    if opts.extrinsics_only or n_pts == 0:
        H = _dense_cam_system(U_d, nf)
        delta = np.linalg.solve(H, -g_c.reshape(-1))
        return delta.reshape(nf, 6), np.zeros((n_pts, 3))

    V_d = damped(V)

    if not opts.use_schur:
        # explicit full system, for verification on small problems
        n = 6 * nf + 3 * n_pts
        H = np.zeros((n, n))
        g = np.zeros(n)
        for k in range(nf):
            H[6 * k : 6 * k + 6, 6 * k : 6 * k + 6] = U_d[k]
            g[6 * k : 6 * k + 6] = g_c[k]
        for p in range(n_pts):
            o = 6 * nf + 3 * p
            H[o : o + 3, o : o + 3] = V_d[p]
            g[o : o + 3] = g_p[p]
        for n_obs in range(len(obs_cam)):
            ci = obs_cam[n_obs]
            if ci not in free_pos:
                continue
            k = free_pos[ci]
            o = 6 * nf + 3 * obs_pt[n_obs]
            H[6 * k : 6 * k + 6, o : o + 3] += W[n_obs]
            H[o : o + 3, 6 * k : 6 * k + 6] += W[n_obs].T
        delta = np.linalg.solve(H, -g)
        return delta[: 6 * nf].reshape(nf, 6), delta[6 * nf :].reshape(n_pts, 3)

    Vinv = np.linalg.inv(V_d)
    Y = np.einsum("nij,njk->nik", W, Vinv[obs_pt])  # zero rows for fixed cameras

    S = _dense_cam_system(U_d, nf)
    rhs = -g_c.copy()
    yg = np.einsum("nij,nj->ni", Y, g_p[obs_pt])
    for k, ci in enumerate(free_cams):
        mask = obs_cam == ci
        rhs[k] += yg[mask].sum(axis=0)

    per_cam = {}
    for k, ci in enumerate(free_cams):
        mask = obs_cam == ci
        per_cam[k] = (obs_pt[mask], Y[mask], W[mask])
    for ka in range(nf):
        pts_a, Y_a, _W_a = per_cam[ka]
        for kb in range(nf):
            pts_b, _Y_b, W_b = per_cam[kb]
            common, ia, ib = np.intersect1d(pts_a, pts_b, assume_unique=True, return_indices=True)
            if len(common) == 0:
                continue
            S[6 * ka : 6 * ka + 6, 6 * kb : 6 * kb + 6] -= np.einsum("nij,nkj->ik", Y_a[ia], W_b[ib])

    delta_c = np.linalg.solve(S, rhs.reshape(-1)).reshape(nf, 6)

    # back-substitute: δp = V⁻¹(−g_p − Wᵀ δc)
    tmp = -g_p.copy()
    acc = np.zeros((n_pts, 3))
    for k, ci in enumerate(free_cams):
        mask = obs_cam == ci
        contrib = W[mask].transpose(0, 2, 1) @ delta_c[k]
        for comp in range(3):
            acc[:, comp] += np.bincount(obs_pt[mask], weights=contrib[:, comp], minlength=n_pts)
    tmp -= acc
    delta_p = np.einsum("pij,pj->pi", Vinv, tmp)
    return delta_c, delta_p


def _dense_cam_system(U_d: np.ndarray, nf: int) -> np.ndarray:
    H = np.zeros((6 * nf, 6 * nf))
    for k in range(nf):
        H[6 * k : 6 * k + 6, 6 * k : 6 * k + 6] = U_d[k]
    return H
