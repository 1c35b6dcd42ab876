"""Tests for multi-view ray triangulation."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from gaitrig.errors import DegenerateRays, NotEnoughRays, TooFewConfidentViews
from gaitrig.geometry import Ray, look_at, project
from gaitrig.sessionio import CaptureSession, DetectionFrame, SessionCamera
from gaitrig.triangulate import (
    JointObservation,
    pairwise_system,
    triangulate_joint,
    triangulate_rays,
    triangulate_sequence,
)
from tests.conftest import make_intrinsics, ring_cameras


def normal_equation_oracle(rays):
    """Literal (AᵀA)⁻¹Aᵀb evaluation plus endpoint averaging."""
    A, b = pairwise_system(rays)
    w = np.linalg.inv(A.T @ A) @ A.T @ b
    endpoints = np.stack([r.origin + wi * r.direction for r, wi in zip(rays, w)])
    return endpoints.mean(axis=0), w


def pairwise_gap_objective(rays):
    """Sum of squared pairwise endpoint distances as a function of w."""

    def f(w):
        e = [r.origin + wi * r.direction for r, wi in zip(rays, w)]
        total = 0.0
        for i in range(len(e)):
            for j in range(i + 1, len(e)):
                total += float(np.sum((e[i] - e[j]) ** 2))
        return total

    return f


def random_rig_rays(rng, n=3, miss=0.0):
    """Rays from a ring of origins aimed at a common target, optionally
    perturbed sideways so they pairwise miss by about ``miss`` meters."""
    target = rng.normal(0, 1, 3) + np.array([0, 0, 2.0])
    rays = []
    for k in range(n):
        ang = 2 * np.pi * k / n + rng.uniform(0, 2 * np.pi / n / 2)
        origin = np.array([6 * np.cos(ang), 6 * np.sin(ang), rng.uniform(0.5, 2.5)])
        direction = target - origin
        if miss > 0:
            side = np.cross(direction, [0, 0, 1.0])
            side /= np.linalg.norm(side)
            direction = direction + side * miss
        rays.append(Ray(origin=origin, direction=direction))
    return rays, target


class TestTriangulateRays:
    def test_exact_intersection(self):
        target = np.array([0.0, 0.0, 5.0])
        rays = [
            Ray(origin=[1, 0, 0], direction=target - np.array([1.0, 0, 0])),
            Ray(origin=[-1, 0, 0], direction=target - np.array([-1.0, 0, 0])),
        ]
        res = triangulate_rays(rays)
        np.testing.assert_allclose(res.point, target, atol=1e-12)
        assert res.rms_ray_gap < 1e-12

    def test_three_ray_system_shape_matches_pairwise_stacking(self):
        rays, _ = random_rig_rays(np.random.default_rng(3), n=3)
        A, b = pairwise_system(rays)
        assert A.shape == (9, 3)
        assert b.shape == (9,)
        # row blocks follow pairs (0,1), (0,2), (1,2)
        np.testing.assert_array_equal(A[0:3, 0], rays[0].direction)
        np.testing.assert_array_equal(A[0:3, 1], -rays[1].direction)
        np.testing.assert_array_equal(A[0:3, 2], np.zeros(3))
        np.testing.assert_array_equal(A[3:6, 0], rays[0].direction)
        np.testing.assert_array_equal(A[3:6, 2], -rays[2].direction)
        np.testing.assert_array_equal(A[6:9, 1], rays[1].direction)
        np.testing.assert_array_equal(A[6:9, 2], -rays[2].direction)
        np.testing.assert_array_equal(b[0:3], rays[1].origin - rays[0].origin)

    def test_perturbed_rays_match_nonlinear_minimizer(self, rng):
        # independent oracles: literal normal equations and a generic nonlinear
        # minimizer of the pairwise endpoint gap must agree with the solver
        rays, _target = random_rig_rays(rng, n=3, miss=0.002)
        res = triangulate_rays(rays)
        oracle_point, oracle_w = normal_equation_oracle(rays)
        np.testing.assert_allclose(res.point, oracle_point, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(res.per_ray_params, oracle_w, rtol=1e-9, atol=1e-12)
        opt = minimize(pairwise_gap_objective(rays), oracle_w, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 5000})
        np.testing.assert_allclose(opt.x, oracle_w, atol=1e-6)

    def test_oracle_equivalence_random_draws(self, rng):
        for _ in range(300):
            rays, _ = random_rig_rays(rng, n=rng.integers(2, 5), miss=rng.uniform(0, 0.01))
            res = triangulate_rays(rays)
            if res.condition > 1e10:
                continue
            point, w = normal_equation_oracle(rays)
            np.testing.assert_allclose(res.point, point, rtol=1e-9, atol=1e-10)

    def test_parallel_rays_raise(self):
        with pytest.raises(DegenerateRays):
            triangulate_rays([
                Ray(origin=[0, 0, 0], direction=[0, 0, 1]),
                Ray(origin=[1, 0, 0], direction=[0, 0, 1]),
            ])

    def test_antiparallel_rays_raise(self):
        with pytest.raises(DegenerateRays):
            triangulate_rays([
                Ray(origin=[0, 0, 0], direction=[0, 0, 1]),
                Ray(origin=[1, 0, 0], direction=[0, 0, -2.0]),
            ])

    def test_identical_rays_raise(self):
        r = Ray(origin=[0, 1, 0], direction=[1, 1, 1])
        with pytest.raises(DegenerateRays):
            triangulate_rays([r, r])

    def test_single_ray_rejected(self):
        with pytest.raises(NotEnoughRays):
            triangulate_rays([Ray(origin=[0, 0, 0], direction=[0, 0, 1])])

    @given(perm=st.permutations(range(4)))
    @settings(max_examples=24, deadline=None)
    def test_ray_order_invariance(self, perm):
        rays, _ = random_rig_rays(np.random.default_rng(11), n=4, miss=0.004)
        base = triangulate_rays(rays).point
        shuffled = triangulate_rays([rays[i] for i in perm]).point
        np.testing.assert_allclose(shuffled, base, atol=1e-12)


class TestTriangulateJoint:
    def test_noiseless_roundtrip(self, rng):
        cams = ring_cameras(3)
        X = np.array([0.3, -0.2, 1.1])
        obs = [
            JointObservation(camera_id=cid, pixel=project(X, intr, pose))
            for cid, (intr, pose) in cams.items()
        ]
        res = triangulate_joint(obs, cams)
        assert np.linalg.norm(res.point - X) < 1e-9

    def test_noise_monte_carlo_median_error(self):
        # 2 px pixel noise at 5-10 m: median 3D error under 3 cm over 1000 joints
        cams = ring_cameras(3, radius=7.0)
        errors = []
        rng = np.random.default_rng(99)
        for _ in range(1000):
            X = rng.uniform(-1.5, 1.5, 3) + np.array([0, 0, 1.0])
            obs = [
                JointObservation(cid, project(X, intr, pose) + rng.normal(0, 2.0, 2))
                for cid, (intr, pose) in cams.items()
            ]
            res = triangulate_joint(obs, cams)
            errors.append(np.linalg.norm(res.point - X))
        assert np.median(errors) < 0.03

    def test_single_observation_rejected(self):
        cams = ring_cameras(3)
        obs = [JointObservation("cam0", np.array([640.0, 360.0]))]
        with pytest.raises(TooFewConfidentViews):
            triangulate_joint(obs, cams)

    def test_confidence_floor_filters_views(self):
        cams = ring_cameras(3)
        X = np.array([0.0, 0.0, 1.0])
        obs = [
            JointObservation("cam0", project(X, *cams["cam0"]), confidence=1.0),
            JointObservation("cam1", project(X, *cams["cam1"]), confidence=0.4),
            JointObservation("cam2", project(X, *cams["cam2"]), confidence=0.3),
        ]
        with pytest.raises(TooFewConfidentViews):
            triangulate_joint(obs, cams)
        res = triangulate_joint(obs, cams, confidence_floor=0.2)
        assert np.linalg.norm(res.point - X) < 1e-9

    def test_reprojection_consistency(self, rng):
        # triangulated point reprojects onto the generating pixels
        cams = ring_cameras(3)
        X = np.array([-0.4, 0.6, 0.9])
        obs = [JointObservation(cid, project(X, intr, pose)) for cid, (intr, pose) in cams.items()]
        res = triangulate_joint(obs, cams)
        for o in obs:
            intr, pose = cams[o.camera_id]
            np.testing.assert_allclose(project(res.point, intr, pose), o.pixel, atol=1e-6)


def _session_from_tracks(cams, joint_positions_per_instance, drop=None):
    """Build a session whose detections are exact projections; ``drop`` maps
    (camera_id, instance, joint) to skip entries."""
    drop = drop or set()
    streams = {}
    for cid, (intr, pose) in cams.items():
        frames = []
        for k, joints in enumerate(joint_positions_per_instance):
            obs = {}
            for name, X in joints.items():
                if (cid, k, name) in drop:
                    continue
                px = project(X, intr, pose)
                obs[name] = (float(px[0]), float(px[1]), 1.0)
            frames.append(DetectionFrame(frame_idx=k, t_ms=k * 33.0, obs=obs))
        streams[cid] = frames
    cameras = {cid: SessionCamera(cid, intr) for cid, (intr, _p) in cams.items()}
    joint_names = tuple(sorted(joint_positions_per_instance[0]))
    return CaptureSession(cameras=cameras, streams=streams, joints=joint_names)


class TestTriangulateSequence:
    def test_full_sequence_roundtrip(self, rng):
        cams = ring_cameras(3)
        instances = []
        for k in range(10):
            instances.append({
                f"j{i}": np.array([0.3 * np.sin(k / 3 + i), 0.3 * np.cos(k / 5 + i), 0.8 + 0.05 * i])
                for i in range(4)
            })
        session = _session_from_tracks(cams, instances)
        track = triangulate_sequence(session, cams)
        assert len(track.instances) == 10
        for k, inst in enumerate(track.instances):
            assert len(inst.positions) == 4
            for name, X in instances[k].items():
                assert np.linalg.norm(inst.positions[name] - X) < 1e-9
                assert inst.diagnostics[name].n_views == 3

    def test_joint_missing_in_one_camera_still_triangulated(self, rng):
        cams = ring_cameras(3)
        instances = [{"a": np.array([0.1, 0.2, 1.0]), "b": np.array([-0.2, 0.1, 1.2])}]
        session = _session_from_tracks(cams, instances, drop={("cam1", 0, "a")})
        track = triangulate_sequence(session, cams)
        assert track.instances[0].diagnostics["a"].n_views == 2
        assert np.linalg.norm(track.instances[0].positions["a"] - instances[0]["a"]) < 1e-8

    def test_joint_in_single_camera_is_gap(self, rng):
        cams = ring_cameras(3)
        instances = [{"a": np.array([0.1, 0.2, 1.0]), "b": np.array([-0.2, 0.1, 1.2])}]
        session = _session_from_tracks(
            cams, instances, drop={("cam1", 0, "a"), ("cam2", 0, "a")}
        )
        track = triangulate_sequence(session, cams)
        assert "a" not in track.instances[0].positions
        assert "b" in track.instances[0].positions
