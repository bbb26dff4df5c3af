from __future__ import annotations

import numpy as np
import pytest

from aerotraj.camera import Intrinsics, Pose
from aerotraj.rotations import rot_x


@pytest.fixture
def hd_intrinsics() -> Intrinsics:
    return Intrinsics(fx=1400.0, fy=1400.0, cx=960.0, cy=540.0, width=1920, height=1080)


def nadir_pose(center=(0.0, 0.0, 100.0)) -> Pose:
    """World-to-camera pose of a straight-down camera at the given center."""
    R = rot_x(np.pi)
    c = np.asarray(center, dtype=float)
    return Pose(R, -R @ c)


@pytest.fixture
def nadir_100m() -> Pose:
    return nadir_pose()
