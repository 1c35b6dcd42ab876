"""Tests for the annotation HTTP service."""

from __future__ import annotations

import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gaitrig.cli import main as cli_main
from gaitrig.geometry import project, rotation_angle_between
from gaitrig.sessionio import load_rig, load_track
from gaitrig.service import ServiceConfig, create_app


@pytest.fixture(scope="module")
def session_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("served")
    assert cli_main(["synth", "--out", str(out), "--seed", "23", "--frames", "40",
                     "--noise", "0.5", "--dropout", "0.0", "--perturb", "0.05",
                     "--perturb-long", "0.2"]) == 0
    return out


def make_config(session_dir, tmp_path, with_track=True):
    return ServiceConfig(
        rig_path=session_dir / "rig_initial.json",
        detection_paths=sorted(session_dir.glob("detections_close*.jsonl")),
        track_path=(session_dir / "track_truth.jsonl") if with_track else None,
        labels_path=None,
        state_path=tmp_path / "state.json",
    )


@pytest.fixture()
def client(session_dir, tmp_path):
    app = create_app(make_config(session_dir, tmp_path))
    with TestClient(app) as c:
        yield c


def solve_correspondences(client, session_dir, cam_id="close0", n=12, frame=0):
    """Post n correspondences taken from ground-truth projections."""
    rig_truth = load_rig(session_dir / "rig_truth.json")
    track = load_track(session_dir / "track_truth.jsonl")
    cam = rig_truth.cameras[cam_id]
    inst = track.instances[frame]
    names = sorted(inst.positions)[:n]
    count = 0
    for name in names:
        px = project(inst.positions[name], cam.intrinsics, cam.pose)
        r = client.post(f"/correspondences/{cam_id}",
                        json={"marker_id": name, "u": float(px[0]), "v": float(px[1]),
                              "frame_idx": frame})
        assert r.status_code == 200, r.text
        count = r.json()["count"]
    return count, rig_truth.cameras[cam_id].pose


class TestSessionAndFrames:
    def test_session_summary(self, client):
        r = client.get("/session")
        assert r.status_code == 200
        body = r.json()
        ids = {c["id"] for c in body["cameras"]}
        assert {"close0", "close1", "close2", "long"} <= ids
        assert body["track_len"] == 40
        assert len(body["joints"]) == 33

    def test_get_frame(self, client):
        r = client.get("/frames/close0/3")
        assert r.status_code == 200
        body = r.json()
        assert body["frame"] == 3
        assert len(body["detections"]) > 0
        assert body["image_url"] is None

    def test_unknown_camera_404(self, client):
        assert client.get("/frames/ghost/0").status_code == 404

    def test_unknown_frame_404(self, client):
        assert client.get("/frames/close0/99999").status_code == 404

    def test_repeated_reads_identical(self, client):
        a = client.get("/session").json()
        b = client.get("/session").json()
        assert a == b


class TestCorrespondencesAndPnp:
    def test_click_twelve_and_solve(self, client, session_dir):
        count, pose_true = solve_correspondences(client, session_dir)
        assert count == 12
        r = client.post("/solve/pnp/close0")
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["mean_residual_px"] < 1e-6
        R = np.array(body["pose"]["rotation"])
        t = np.array(body["pose"]["position"])
        assert rotation_angle_between(R, pose_true.rotation) < 1e-5
        assert np.linalg.norm(t - pose_true.position) < 1e-5

    def test_delete_updates_count(self, client, session_dir):
        solve_correspondences(client, session_dir, n=3)
        r = client.delete("/correspondences/close0/C7")
        assert r.status_code == 200
        assert r.json()["count"] == 2
        assert client.delete("/correspondences/close0/C7").status_code == 404

    def test_insufficient_points_is_structured_422(self, client, session_dir):
        solve_correspondences(client, session_dir, n=3)
        r = client.post("/solve/pnp/close0")
        assert r.status_code == 422
        assert r.json()["detail"]["kind"] == "InsufficientPoints"

    def test_unknown_marker_rejected(self, client):
        r = client.post("/correspondences/close0",
                        json={"marker_id": "NOSUCH", "u": 1.0, "v": 2.0, "frame_idx": 0})
        assert r.status_code == 422
        assert r.json()["detail"]["kind"] == "UnknownMarker"

    def test_revision_conflict_409(self, client):
        rev = client.get("/session").json()["revision"]
        r = client.post("/correspondences/close0",
                        json={"marker_id": "C7", "u": 1.0, "v": 2.0, "frame_idx": 0,
                              "revision": rev + 5})
        assert r.status_code == 409


class TestNudgeAndReproject:
    def test_zero_delta_nudge_is_identity(self, client):
        before = client.get("/reproject/long/0").json()["joints"]
        r = client.post("/longrange/nudge", json={"d_theta_e": 0.0, "d_theta_a": 0.0, "d_d": 0.0})
        assert r.status_code == 200
        after = client.get("/reproject/long/0").json()["joints"]
        assert before.keys() == after.keys()
        for name in before:
            assert abs(before[name][0] - after[name][0]) < 1e-12
            assert abs(before[name][1] - after[name][1]) < 1e-12

    def test_reproject_matches_library_bit_for_bit(self, client, session_dir):
        from gaitrig.longrange import nudged_pose

        rig = load_rig(session_dir / "rig_initial.json")
        track = load_track(session_dir / "track_truth.jsonl")
        cam = rig.cameras["long"]
        pose = nudged_pose(cam.nudge)
        body = client.get("/reproject/long/5").json()
        inst = track.instances[5]
        for name, (u, v) in body["joints"].items():
            px = project(inst.positions[name], cam.intrinsics, pose)
            assert u == px[0] and v == px[1]

    def test_nudge_bounds_rejected(self, client):
        r = client.post("/longrange/nudge", json={"d_theta_e": 0.9, "d_theta_a": 0.0, "d_d": 0.0})
        assert r.status_code == 422

    def test_nudge_reports_containment_over_labeled_frames(self, client, session_dir):
        # label 10 frames from ground-truth long-camera boxes, then nudge
        from gaitrig.evaluate import BoxLabel  # noqa: F401  (shape reference)
        from gaitrig.sessionio import load_labels

        cli_labels = session_dir / "labels_long.jsonl"
        labels = load_labels(cli_labels)[:10]
        for b in labels:
            r = client.post(f"/labels/long/{b.frame_idx}", json={"rect": list(b.rect)})
            assert r.status_code == 200
        r = client.post("/longrange/nudge", json={"d_theta_e": 0.0, "d_theta_a": 0.0, "d_d": 0.0})
        cont = r.json()["containment"]
        assert cont is not None
        assert cont["n_frames"] == 10
        metrics = client.get("/metrics").json()
        assert metrics["containment"]["n_frames"] == 10

    def test_degenerate_label_rejected(self, client):
        r = client.post("/labels/long/0", json={"rect": [10.0, 10.0, 10.0, 20.0]})
        assert r.status_code == 422

    def test_delete_label(self, client):
        client.post("/labels/long/0", json={"rect": [0.0, 0.0, 10.0, 10.0]})
        assert client.delete("/labels/long/0").status_code == 200
        assert client.delete("/labels/long/0").status_code == 404


class TestBundleAdjustJob:
    def test_job_lifecycle(self, client):
        r = client.post("/solve/ba", json={})
        assert r.status_code == 200
        job_id = r.json()["job_id"]
        deadline = time.time() + 60
        while time.time() < deadline:
            job = client.get(f"/jobs/{job_id}").json()
            if job["status"] in ("done", "error"):
                break
            time.sleep(0.1)
        assert job["status"] == "done", job
        assert job["result"]["converged"]
        assert job["result"]["final_cost"] <= job["result"]["initial_cost"]

    def test_unknown_job_404(self, client):
        assert client.get("/jobs/nope").status_code == 404


class TestPersistence:
    def test_state_survives_restart(self, session_dir, tmp_path):
        config = make_config(session_dir, tmp_path)
        app = create_app(config)
        with TestClient(app) as c:
            solve_correspondences(c, session_dir, n=12)
            assert c.post("/solve/pnp/close0").status_code == 200
            assert c.post("/labels/long/2", json={"rect": [1.0, 2.0, 30.0, 40.0]}).status_code == 200
            assert c.post("/longrange/nudge",
                          json={"d_theta_e": 0.004, "d_theta_a": -0.002, "d_d": 0.25}).status_code == 200
            before = c.get("/session").json()
            pose_before = c.post("/solve/pnp/close0").json()["pose"]

        app2 = create_app(config)
        with TestClient(app2) as c2:
            after = c2.get("/session").json()
            assert after["n_labels"] == before["n_labels"]
            assert after["nudge"]["d_theta_e"] == 0.004
            cams = {c["id"]: c for c in after["cameras"]}
            assert cams["close0"]["n_correspondences"] == 12
            assert cams["close0"]["calibrated"]
            pose_after = c2.post("/solve/pnp/close0").json()["pose"]
            assert pose_after == pose_before
            frame = c2.get("/frames/long/2").json()
            assert frame["label"] == [1.0, 2.0, 30.0, 40.0]
