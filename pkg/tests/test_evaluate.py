"""Tests for the evaluation metrics."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitrig.errors import EmptyInput, LengthMismatch, NoLabels, ValidationError
from gaitrig.evaluate import (
    BoxLabel,
    bbox_containment,
    detection_success,
    error_report,
    reprojection_error,
)


def mean_distance_oracle(pred, ref):
    """Independent one-line evaluation of the mean pixel distance."""
    return float(np.mean(np.sqrt(np.sum((np.asarray(pred, float) - np.asarray(ref, float)) ** 2, axis=1))))


class TestReprojectionError:
    def test_three_four_five(self):
        stats = reprojection_error([(3.0, 4.0)], [(0.0, 0.0)])
        assert stats.mean == 5.0
        assert stats.max == 5.0
        assert stats.n == 1

    def test_identical_inputs_zero(self):
        pts = [(10.0, 20.0), (1.5, -2.5)]
        stats = reprojection_error(pts, pts)
        assert stats.mean == 0.0

    def test_matches_one_line_oracle_exactly(self, rng):
        pred = rng.normal(0, 100, (500, 2))
        ref = pred + rng.normal(0, 3, (500, 2))
        stats = reprojection_error(pred, ref)
        assert abs(stats.mean - mean_distance_oracle(pred, ref)) < 1e-12

    def test_rayleigh_mean_monte_carlo(self):
        # per-axis N(0, 2) offsets have mean distance 2*sqrt(pi/2) ~ 2.5066
        rng = np.random.default_rng(123)
        ref = rng.uniform(0, 1000, (1000, 2))
        pred = ref + rng.normal(0, 2.0, (1000, 2))
        stats = reprojection_error(pred, ref)
        expected = 2.0 * np.sqrt(np.pi / 2.0)
        assert abs(stats.mean - expected) / expected < 0.05

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            reprojection_error([(0, 0)], [(0, 0), (1, 1)])

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            reprojection_error([], [])

    def test_per_camera_breakdown(self):
        pred = [(0.0, 0.0), (3.0, 4.0), (6.0, 8.0)]
        ref = [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]
        stats = reprojection_error(pred, ref, camera_ids=["a", "a", "b"])
        assert stats.per_camera["a"].mean == 2.5
        assert stats.per_camera["b"].mean == 10.0
        assert stats.mean == 5.0

    def test_stats_ordering_invariants(self, rng):
        pred = rng.normal(0, 10, (200, 2))
        ref = rng.normal(0, 10, (200, 2))
        s = reprojection_error(pred, ref)
        assert s.mean <= s.max
        assert s.median <= s.p95 <= s.max


class TestBoxLabel:
    def test_degenerate_rect_rejected(self):
        with pytest.raises(ValidationError):
            BoxLabel("c", 0, rect=(5.0, 0.0, 5.0, 10.0))

    def test_contains_is_boundary_inclusive(self):
        b = BoxLabel("c", 0, rect=(0.0, 0.0, 10.0, 10.0))
        assert b.contains(0.0, 0.0)
        assert b.contains(10.0, 10.0)
        assert not b.contains(10.0001, 5.0)


class TestBboxContainment:
    def test_all_inside(self):
        kp = {("c", 0): np.array([[1.0, 1.0], [5.0, 5.0]])}
        labels = [BoxLabel("c", 0, rect=(0.0, 0.0, 10.0, 10.0))]
        stats = bbox_containment(kp, labels)
        assert stats.fraction == 1.0

    def test_half_split_with_boundary_inside(self):
        # box edge at u=1 splits eight points: two strictly inside, two on the
        # edge (counted inside), four outside -> exactly 50%
        kp = {("c", 0): np.array([
            [0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0],
            [2.0, 0.0], [2.0, 1.0], [3.0, 0.0], [3.0, 1.0],
        ])}
        labels = [BoxLabel("c", 0, rect=(-1.0, -1.0, 1.0, 2.0))]
        stats = bbox_containment(kp, labels)
        assert stats.fraction == 0.5

    def test_no_labels_raises(self):
        with pytest.raises(NoLabels):
            bbox_containment({}, [])

    def test_per_subject_breakdown(self):
        kp = {("c", 0): np.array([[1.0, 1.0]]), ("c", 1): np.array([[100.0, 100.0]])}
        labels = [BoxLabel("c", 0, rect=(0, 0, 10, 10)), BoxLabel("c", 1, rect=(0, 0, 10, 10))]
        subjects = {("c", 0): "s1", ("c", 1): "s2"}
        stats = bbox_containment(kp, labels, subjects=subjects)
        assert stats.per_subject == {"s1": 1.0, "s2": 0.0}

    @given(shrink=st.floats(0.0, 0.49))
    @settings(max_examples=40, deadline=None)
    def test_shrinking_never_increases_containment(self, shrink):
        rng = np.random.default_rng(77)
        kp = {("c", 0): rng.uniform(0, 10, (50, 2))}
        full = BoxLabel("c", 0, rect=(0.0, 0.0, 10.0, 10.0))
        w = 10.0 * shrink
        small = BoxLabel("c", 0, rect=(w, w, 10.0 - w, 10.0 - w))
        a = bbox_containment(kp, [full]).fraction
        b = bbox_containment(kp, [small]).fraction
        assert b <= a

    def test_frame_permutation_invariance(self, rng):
        kp = {("c", i): rng.uniform(0, 10, (5, 2)) for i in range(6)}
        labels = [BoxLabel("c", i, rect=(2.0, 2.0, 8.0, 8.0)) for i in range(6)]
        a = bbox_containment(kp, labels).fraction
        b = bbox_containment(kp, labels[::-1]).fraction
        assert a == b


class TestDetectionSuccess:
    def test_everything_inside(self):
        det = {("c", i): np.array([[5.0, 5.0], [6.0, 6.0]]) for i in range(4)}
        labels = [BoxLabel("c", i, rect=(0, 0, 10, 10)) for i in range(4)]
        assert detection_success(det, labels).rate == 1.0

    def test_no_detections_rate_zero(self):
        det = {}
        labels = [BoxLabel("c", i, rect=(0, 0, 10, 10)) for i in range(4)]
        assert detection_success(det, labels).rate == 0.0

    def test_threshold_monotonicity(self, rng):
        det = {("c", i): rng.uniform(0, 20, (10, 2)) for i in range(30)}
        labels = [BoxLabel("c", i, rect=(0.0, 0.0, 10.0, 10.0)) for i in range(30)]
        strict = detection_success(det, labels, threshold=1.0).rate
        loose = detection_success(det, labels, threshold=0.2).rate
        assert strict <= loose

    def test_uniform_scatter_matches_brute_force(self):
        # detections scattered over the image; success rate must equal an
        # independent per-frame count at the same threshold
        rng = np.random.default_rng(5)
        w, h = 1280.0, 720.0
        labels, det = [], {}
        for i in range(200):
            u0 = rng.uniform(0, w - 15)
            v0 = rng.uniform(0, h - 25)
            labels.append(BoxLabel("long", i, rect=(u0, v0, u0 + 15.0, v0 + 25.0)))
            det[("long", i)] = np.stack([rng.uniform(0, w, 20), rng.uniform(0, h, 20)], axis=1)
        got = detection_success(det, labels, threshold=0.2)
        wins = 0
        for b in labels:
            pts = det[("long", b.frame_idx)]
            n_in = sum(1 for p in pts if b.contains(p[0], p[1]))
            if n_in / len(pts) >= 0.2:
                wins += 1
        assert got.n_success == wins
        assert got.rate == wins / len(labels)

    def test_bad_threshold_rejected(self):
        labels = [BoxLabel("c", 0, rect=(0, 0, 1, 1))]
        with pytest.raises(ValidationError):
            detection_success({}, labels, threshold=0.0)

    def test_no_labels(self):
        with pytest.raises(NoLabels):
            detection_success({}, [])


class TestErrorReport:
    def _pipeline(self, noise=0.0):
        from gaitrig.sessionio import build_session
        from gaitrig.synth import PathSpec, RigSpec, WalkerSpec, gen_rig, gen_walker, render_detections
        from gaitrig.triangulate import triangulate_sequence

        # a full 0.3 m loop keeps the subject centered so the ring stays symmetric
        track = gen_walker(WalkerSpec(duration_s=2.0, path=PathSpec(radius=0.3)), seed=21)
        rig, _ = gen_rig(RigSpec())
        det, _ = render_detections(track, rig, noise_sigma=noise, seed=3,
                                   cameras=["close0", "close1", "close2"])
        session = build_session(rig, det)
        cams = {cid: (rig.cameras[cid].intrinsics, rig.cameras[cid].pose) for cid in det}
        tri = triangulate_sequence(session, cams)
        return session, cams, tri

    def test_noiseless_mass_in_first_bin(self):
        session, cams, tri = self._pipeline(noise=0.0)
        report = error_report(session, cams, tri)
        for cam_rep in report.per_camera.values():
            assert cam_rep.hist_counts[0] == sum(cam_rep.hist_counts)

    def test_noisy_cameras_symmetric(self):
        session, cams, tri = self._pipeline(noise=2.0)
        report = error_report(session, cams, tri)
        means = [rep.stats.mean for rep in report.per_camera.values()]
        assert max(means) - min(means) < 0.1 * max(means)

    def test_totals_match_adjustment_residuals(self):
        from gaitrig.bundle import build_problem, compute_residuals

        session, cams, tri = self._pipeline(noise=1.0)
        report = error_report(session, cams, tri)
        problem = build_problem(session, cams, tri)
        res = compute_residuals(problem, {c.camera_id: c.pose for c in problem.cameras},
                                dict(problem.points))
        norms = np.linalg.norm(res, axis=1)
        assert abs(norms.mean() - report.overall.mean) < 1e-12
        by_cam = {}
        for o, nrm in zip(problem.observations, norms):
            by_cam.setdefault(o.camera_id, []).append(nrm)
        for cid, vals in by_cam.items():
            assert abs(np.mean(vals) - report.per_camera[cid].stats.mean) < 1e-12

    def test_table_rows(self):
        session, cams, tri = self._pipeline()
        report = error_report(session, cams, tri)
        rows = report.table()
        assert rows[0][0] == "all"
        assert {r[0] for r in rows[1:]} == set(report.per_camera)
