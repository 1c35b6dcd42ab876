"""Tests for the synthetic scene generator."""

from __future__ import annotations

import numpy as np
import pytest

from gaitrig.errors import ValidationError
from gaitrig.geometry import project_points, rotation_angle_between
from gaitrig.synth import (
    PathSpec,
    RigSpec,
    WalkerSpec,
    gen_boxes,
    gen_rig,
    gen_walker,
    philox,
    render_detections,
)


def pixel_heights(track, rig, camera_id="long"):
    cam = rig.cameras[camera_id]
    heights = []
    for inst in track.instances:
        pts = np.stack(list(inst.positions.values()))
        pix, z = project_points(pts, cam.intrinsics, cam.pose)
        if np.all(z > 0):
            heights.append(pix[:, 1].max() - pix[:, 1].min())
    return np.array(heights)


class TestGenWalker:
    def test_two_minutes_at_30hz_gives_3600_frames(self):
        track = gen_walker(WalkerSpec(duration_s=120.0, fps=30.0), seed=0)
        assert len(track.instances) == 3600

    def test_zero_speed_freezes_all_frames(self):
        spec = WalkerSpec(duration_s=1.0, path=PathSpec(speed=0.0))
        track = gen_walker(spec, seed=1)
        first = track.instances[0].positions
        for inst in track.instances[1:]:
            for name, X in inst.positions.items():
                np.testing.assert_array_equal(X, first[name])

    def test_same_seed_bit_identical(self):
        spec = WalkerSpec(duration_s=2.0)
        a = gen_walker(spec, seed=7)
        b = gen_walker(spec, seed=7)
        for ia, ib in zip(a.instances, b.instances):
            assert ia.t_ms == ib.t_ms
            for name in ia.positions:
                np.testing.assert_array_equal(ia.positions[name], ib.positions[name])

    def test_different_seed_differs(self):
        spec = WalkerSpec(duration_s=1.0)
        a = gen_walker(spec, seed=1)
        b = gen_walker(spec, seed=2)
        diffs = [
            np.abs(ia.positions["LFHD"] - ib.positions["LFHD"]).max()
            for ia, ib in zip(a.instances, b.instances)
        ]
        assert max(diffs) > 0

    def test_rigid_inter_joint_distances(self):
        track = gen_walker(WalkerSpec(duration_s=1.0), seed=3)
        names = list(track.joints)[:8]
        ref = track.instances[0].positions
        ref_d = {
            (a, b): np.linalg.norm(ref[a] - ref[b]) for a in names for b in names if a < b
        }
        for inst in track.instances[1:]:
            for (a, b), d0 in ref_d.items():
                d = np.linalg.norm(inst.positions[a] - inst.positions[b])
                assert abs(d - d0) < 1e-9

    def test_33_joint_default_schema(self):
        track = gen_walker(WalkerSpec(duration_s=0.1), seed=0)
        assert len(track.joints) == 33
        assert "LFHD" in track.joints and "RTOE" in track.joints

    def test_custom_joint_count(self):
        track = gen_walker(WalkerSpec(joint_count=5, duration_s=0.1), seed=0)
        assert len(track.joints) == 5

    def test_rejects_bad_specs(self):
        with pytest.raises(ValidationError):
            WalkerSpec(joint_count=1)
        with pytest.raises(ValidationError):
            WalkerSpec(fps=0.0)


class TestGenRig:
    def test_long_range_pixel_height_regime(self):
        # default: 1.6 m subject at 60 m through fx=900 sits in the 20-25 px band
        rig_truth, _ = gen_rig(RigSpec())
        track = gen_walker(WalkerSpec(duration_s=5.0), seed=2)
        h = pixel_heights(track, rig_truth)
        assert 20.0 <= np.median(h) <= 25.0
        assert h.max() <= 25.5

    def test_pixel_height_follows_pinhole_arithmetic(self):
        # 900 * 1.75 / 60 = 26.25 px for a subject standing at the origin
        rig_truth, _ = gen_rig(RigSpec())
        track = gen_walker(WalkerSpec(height=1.75, duration_s=5.0), seed=2)
        h = np.median(pixel_heights(track, rig_truth))
        assert 20.0 <= h <= 27.0
        assert abs(h - 900.0 * 1.75 / 60.0) / (900.0 * 1.75 / 60.0) < 0.05

    def test_zero_perturbation_initial_equals_truth(self):
        truth, init = gen_rig(RigSpec(perturb_sigma=0.0))
        for cid in truth.cameras:
            pt, pi = truth.cameras[cid].pose, init.cameras[cid].pose
            assert np.linalg.norm(pt.position - pi.position) < 1e-12
            assert np.abs(pt.rotation - pi.rotation).max() < 1e-12

    def test_perturbed_initials_differ_but_stay_close(self):
        truth, init = gen_rig(RigSpec(perturb_sigma=0.1, perturb_seed=3))
        moved = [
            np.linalg.norm(truth.cameras[c].pose.position - init.cameras[c].pose.position)
            for c in truth.cameras
        ]
        assert max(moved) > 0.01
        assert max(moved) < 1.0

    def test_pairwise_baselines_exceed_radius(self):
        truth, _ = gen_rig(RigSpec(close_radius=8.0))
        close = [c.pose.position for c in truth.cameras.values() if c.role == "close"]
        for i in range(len(close)):
            for j in range(i + 1, len(close)):
                assert np.linalg.norm(close[i] - close[j]) > 8.0

    def test_long_camera_has_nudge_base(self):
        _truth, init = gen_rig(RigSpec())
        nudge = init.cameras["long"].nudge
        assert nudge is not None
        assert nudge.placement_axis == "+Y"
        assert nudge.d_theta_e == 0.0
        np.testing.assert_allclose(nudge.base.position, [0.0, 60.0, 0.0])

    def test_rejects_long_camera_inside_ring(self):
        with pytest.raises(ValidationError):
            RigSpec(close_radius=8.0, long_distance=5.0)


class TestRenderDetections:
    def test_noiseless_equals_exact_projection(self):
        track = gen_walker(WalkerSpec(duration_s=0.5), seed=1)
        rig, _ = gen_rig(RigSpec())
        det, overlay = render_detections(track, rig, cameras=["close0"])
        for df, tf in zip(det["close0"], overlay["close0"]):
            assert df.obs.keys() == tf.obs.keys()
            for name in df.obs:
                assert df.obs[name][:2] == tf.obs[name][:2]
                assert df.obs[name][2] == 1.0

    def test_noise_standard_deviation(self):
        track = gen_walker(WalkerSpec(duration_s=400 / 30.0), seed=1)
        rig, _ = gen_rig(RigSpec())
        det, overlay = render_detections(track, rig, noise_sigma=2.0, seed=5,
                                         cameras=["close0", "close1"])
        diffs = []
        for cid in det:
            for df, tf in zip(det[cid], overlay[cid]):
                for name, (u, v, _c) in df.obs.items():
                    if name in tf.obs:
                        tu, tv, _tc = tf.obs[name]
                        diffs.extend([u - tu, v - tv])
        diffs = np.array(diffs)
        assert len(diffs) >= 10_000
        assert 1.9 <= diffs.std() <= 2.1

    def test_dropout_rate(self):
        track = gen_walker(WalkerSpec(duration_s=400 / 30.0), seed=1)
        rig, _ = gen_rig(RigSpec())
        det, overlay = render_detections(track, rig, dropout=0.1, seed=6, cameras=["close0", "close1", "close2"])
        total, missing = 0, 0
        for cid in det:
            for df, tf in zip(det[cid], overlay[cid]):
                total += len(tf.obs)
                missing += len(tf.obs) - len(df.obs)
        assert 0.09 <= missing / total <= 0.11

    def test_dropout_confidences_stay_above_floor(self):
        track = gen_walker(WalkerSpec(duration_s=1.0), seed=1)
        rig, _ = gen_rig(RigSpec())
        det, _ = render_detections(track, rig, dropout=0.2, seed=6, cameras=["close0"])
        confs = [c for df in det["close0"] for (_u, _v, c) in df.obs.values()]
        assert min(confs) >= 0.8 - 1e-12
        assert max(confs) <= 1.0

    def test_deterministic_per_seed(self):
        track = gen_walker(WalkerSpec(duration_s=0.5), seed=1)
        rig, _ = gen_rig(RigSpec())
        a, _ = render_detections(track, rig, noise_sigma=1.0, dropout=0.05, seed=9)
        b, _ = render_detections(track, rig, noise_sigma=1.0, dropout=0.05, seed=9)
        for cid in a:
            for fa, fb in zip(a[cid], b[cid]):
                assert fa.obs == fb.obs

    def test_rejects_bad_parameters(self):
        track = gen_walker(WalkerSpec(duration_s=0.1), seed=0)
        rig, _ = gen_rig(RigSpec())
        with pytest.raises(ValidationError):
            render_detections(track, rig, noise_sigma=-1.0)
        with pytest.raises(ValidationError):
            render_detections(track, rig, dropout=1.0)


class TestGenBoxes:
    def test_boxes_bound_projections(self):
        track = gen_walker(WalkerSpec(duration_s=1.0), seed=2)
        rig, _ = gen_rig(RigSpec())
        boxes = gen_boxes(track, rig, "long", inflate=0.0)
        assert len(boxes) == len(track.instances)
        cam = rig.cameras["long"]
        for b in boxes[:5]:
            inst = track.instances[b.frame_idx]
            pts = np.stack([inst.positions[n] for n in sorted(inst.positions)])
            pix, _z = project_points(pts, cam.intrinsics, cam.pose)
            assert np.all(pix[:, 0] >= b.rect[0] - 1e-9)
            assert np.all(pix[:, 0] <= b.rect[2] + 1e-9)

    def test_inflation_widens(self):
        track = gen_walker(WalkerSpec(duration_s=0.5), seed=2)
        rig, _ = gen_rig(RigSpec())
        tight = gen_boxes(track, rig, "long", inflate=0.0)
        wide = gen_boxes(track, rig, "long", inflate=0.1)
        for t, w in zip(tight, wide):
            assert w.rect[0] < t.rect[0] and w.rect[2] > t.rect[2]

    def test_frame_step(self):
        track = gen_walker(WalkerSpec(duration_s=1.0), seed=2)
        rig, _ = gen_rig(RigSpec())
        boxes = gen_boxes(track, rig, "long", frame_step=4)
        assert [b.frame_idx for b in boxes] == list(range(0, 30, 4))


class TestPhilox:
    def test_streams_are_independent_and_reproducible(self):
        a1 = philox(42, 1).uniform(size=5)
        a2 = philox(42, 1).uniform(size=5)
        b = philox(42, 2).uniform(size=5)
        np.testing.assert_array_equal(a1, a2)
        assert np.abs(a1 - b).max() > 0
