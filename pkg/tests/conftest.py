"""Shared synthetic helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from gaitrig.geometry import CameraIntrinsics, CameraPose, look_at, project


def make_intrinsics(dist=()) -> CameraIntrinsics:
    return CameraIntrinsics(fx=900.0, fy=900.0, cx=640.0, cy=360.0, dist=dist)


def ring_cameras(n=3, radius=8.0, height=1.6, intr=None):
    """n cameras on a circle, all looking at the world origin."""
    intr = intr or make_intrinsics()
    cams = {}
    for k in range(n):
        ang = np.pi / 2 + 2 * np.pi * k / n
        pos = np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        cams[f"cam{k}"] = (intr, look_at(pos))
    return cams


def random_visible_point(rng, pose: CameraPose, depth_range=(1.0, 10.0), fov=0.35):
    """World point inside the camera's view frustum."""
    depth = rng.uniform(*depth_range)
    n = rng.uniform(-fov, fov, 2)
    return pose.position + pose.rotation @ np.array([n[0] * depth, n[1] * depth, depth])


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
