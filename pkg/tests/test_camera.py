from __future__ import annotations

import numpy as np
import pytest

from aerotraj.camera import (
    BehindCameraError,
    CameraError,
    CameraFrame,
    Correspondence,
    FrameStatus,
    Intrinsics,
    Pose,
    RansacConfig,
    UnlocalizedError,
    kabsch,
    localize_frame,
    p3p_solutions,
    project,
    project_many,
    smooth_pose_sequence,
)
from aerotraj.rotations import random_rotation, rot_x, rot_z, so3_exp

from conftest import nadir_pose


class TestProject:
    def test_optical_axis(self):
        K = Intrinsics(1.0, 1.0, 0.0, 0.0, 10, 10)
        assert project(K, Pose.identity(), np.array([0.0, 0.0, 1.0])) == (0.0, 0.0)

    def test_similar_triangles(self):
        K = Intrinsics(100.0, 100.0, 320.0, 240.0, 640, 480)
        u, v = project(K, Pose.identity(), np.array([1.0, 0.0, 2.0]))
        assert (u, v) == (370.0, 240.0)

    def test_behind_camera_raises(self):
        K = Intrinsics(100.0, 100.0, 320.0, 240.0, 640, 480)
        with pytest.raises(BehindCameraError):
            project(K, Pose.identity(), np.array([0.0, 0.0, -1.0]))

    def test_out_of_bounds_is_not_an_error(self):
        K = Intrinsics(100.0, 100.0, 320.0, 240.0, 640, 480)
        u, v = project(K, Pose.identity(), np.array([100.0, 0.0, 1.0]))
        assert not K.contains(u, v)


class TestPose:
    def test_orthonormality_enforced(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-6
        with pytest.raises(CameraError):
            Pose(bad, np.zeros(3))

    def test_center(self):
        pose = nadir_pose((3.0, -2.0, 50.0))
        assert pose.center == pytest.approx([3.0, -2.0, 50.0])

    def test_world_camera_round_trip(self):
        rng = np.random.default_rng(1)
        pose = Pose(random_rotation(rng), rng.normal(size=3))
        X = rng.normal(size=3)
        assert pose.camera_to_world(pose.world_to_camera(X)) == pytest.approx(X)


class TestP3P:
    def test_exact_recovery(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            R = random_rotation(rng)
            t = rng.normal(size=3) * 5
            pts_cam = rng.uniform([-5, -5, 5], [5, 5, 30], size=(3, 3))
            if np.linalg.norm(np.cross(pts_cam[1] - pts_cam[0], pts_cam[2] - pts_cam[0])) < 1.0:
                continue
            pts_world = (pts_cam - t) @ R
            bearings = pts_cam / np.linalg.norm(pts_cam, axis=1, keepdims=True)
            sols = p3p_solutions(pts_world, bearings)
            assert sols
            best = min(np.linalg.norm(Rs - R) + np.linalg.norm(ts - t) for Rs, ts in sols)
            assert best < 1e-5

    def test_collinear_points_degenerate(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        bearings = np.tile(np.array([0.0, 0.0, 1.0]), (3, 1))
        assert p3p_solutions(pts, bearings) == []

    def test_kabsch(self):
        rng = np.random.default_rng(7)
        R = random_rotation(rng)
        t = rng.normal(size=3)
        src = rng.normal(size=(10, 3))
        dst = src @ R.T + t
        R2, t2 = kabsch(src, dst)
        assert R2 == pytest.approx(R, abs=1e-10)
        assert t2 == pytest.approx(t, abs=1e-10)


def _urban_scene(rng, n=300):
    """Correspondence geometry with facade-like depth structure."""
    return rng.uniform([-55.0, -55.0, 0.0], [55.0, 55.0, 30.0], size=(n, 3))


class TestLocalizeFrame:
    def test_noiseless_exact(self, hd_intrinsics, nadir_100m):
        rng = np.random.default_rng(7)
        pts = _urban_scene(rng, 100)
        pix, _ = project_many(hd_intrinsics, nadir_100m, pts)
        corr = [Correspondence(pix[i], pts[i]) for i in range(len(pts))]
        res = localize_frame(corr, hd_intrinsics, rng=np.random.default_rng(3))
        assert np.linalg.norm(res.pose.center - nadir_100m.center) < 1e-6
        assert np.linalg.norm(res.pose.rotation - nadir_100m.rotation) < 1e-6
        assert len(res.inlier_indices) == len(pts)

    def test_under_determined_raises(self, hd_intrinsics):
        corr = [
            Correspondence(np.array([10.0 * i, 20.0 * i]), np.array([i, i, 10.0]))
            for i in range(5)
        ]
        with pytest.raises(UnlocalizedError):
            localize_frame(corr, hd_intrinsics, rng=np.random.default_rng(0))

    def test_outlier_robustness_single_seed(self, hd_intrinsics, nadir_100m):
        rng = np.random.default_rng(7)
        pts = _urban_scene(rng)
        pix, _ = project_many(hd_intrinsics, nadir_100m, pts)
        noise_rng = np.random.default_rng(1000)
        pix_n = pix + noise_rng.normal(0.0, 1.0, pix.shape)
        out_idx = noise_rng.choice(len(pts), len(pts) * 30 // 100, replace=False)
        pix_n[out_idx] = noise_rng.uniform([0, 0], [1920, 1080], (len(out_idx), 2))
        corr = [Correspondence(pix_n[i], pts[i]) for i in range(len(pts))]
        res = localize_frame(corr, hd_intrinsics, rng=np.random.default_rng(0))
        assert np.linalg.norm(res.pose.center - nadir_100m.center) < 0.08

    def test_permutation_invariance(self, hd_intrinsics, nadir_100m):
        rng = np.random.default_rng(7)
        pts = _urban_scene(rng, 120)
        pix, _ = project_many(hd_intrinsics, nadir_100m, pts)
        noise_rng = np.random.default_rng(5)
        pix = pix + noise_rng.normal(0.0, 0.5, pix.shape)
        corr = [Correspondence(pix[i], pts[i]) for i in range(len(pts))]
        res_a = localize_frame(corr, hd_intrinsics, rng=np.random.default_rng(11))
        perm = np.random.default_rng(99).permutation(len(corr))
        res_b = localize_frame([corr[i] for i in perm], hd_intrinsics, rng=np.random.default_rng(11))
        assert res_a.pose.rotation == pytest.approx(res_b.pose.rotation, abs=1e-12)
        assert res_a.pose.translation == pytest.approx(res_b.pose.translation, abs=1e-12)

    def test_refinement_cost_monotone(self, hd_intrinsics, nadir_100m):
        rng = np.random.default_rng(7)
        pts = _urban_scene(rng, 150)
        pix, _ = project_many(hd_intrinsics, nadir_100m, pts)
        pix = pix + np.random.default_rng(3).normal(0.0, 1.0, pix.shape)
        corr = [Correspondence(pix[i], pts[i]) for i in range(len(pts))]
        res = localize_frame(corr, hd_intrinsics, rng=np.random.default_rng(0))
        trace = res.cost_trace
        assert all(b <= a for a, b in zip(trace, trace[1:]))

    def test_result_rotation_orthonormal(self, hd_intrinsics, nadir_100m):
        rng = np.random.default_rng(7)
        pts = _urban_scene(rng, 80)
        pix, _ = project_many(hd_intrinsics, nadir_100m, pts)
        pix = pix + np.random.default_rng(4).normal(0.0, 1.5, pix.shape)
        corr = [Correspondence(pix[i], pts[i]) for i in range(len(pts))]
        res = localize_frame(corr, hd_intrinsics, rng=np.random.default_rng(0))
        R = res.pose.rotation
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9

    def test_focal_refinement_flag(self, hd_intrinsics, nadir_100m):
        rng = np.random.default_rng(7)
        pts = _urban_scene(rng, 200)
        true_K = Intrinsics(1415.0, 1412.0, 960.0, 540.0, 1920, 1080)
        pix, _ = project_many(true_K, nadir_100m, pts)
        corr = [Correspondence(pix[i], pts[i]) for i in range(len(pts))]
        res = localize_frame(
            corr, hd_intrinsics, cfg=RansacConfig(refine_focal=True),
            rng=np.random.default_rng(0),
        )
        assert res.intrinsics.fx == pytest.approx(1415.0, abs=0.5)
        assert res.intrinsics.fy == pytest.approx(1412.0, abs=0.5)


def _constant_frames(n, pose, K, center_noise=0.0, rot_noise=0.0, rng=None):
    frames = []
    for i in range(n):
        if rng is not None and (center_noise > 0 or rot_noise > 0):
            c = pose.center + rng.normal(0.0, center_noise, 3)
            R = so3_exp(rng.normal(0.0, rot_noise, 3)) @ pose.rotation
            noisy = Pose(R, -R @ c)
        else:
            noisy = pose
        frames.append(
            CameraFrame(
                frame_index=i, timestamp=i / 25.0, intrinsics=K, pose=noisy,
                status=FrameStatus.LOCALIZED,
            )
        )
    return frames


class TestSmoothPoseSequence:
    def test_noiseless_constant_unchanged(self, hd_intrinsics, nadir_100m):
        frames = _constant_frames(50, nadir_100m, hd_intrinsics)
        out = smooth_pose_sequence(frames)
        for f in out:
            assert np.max(np.abs(f.pose.rotation - nadir_100m.rotation)) < 1e-9
            assert np.max(np.abs(f.pose.translation - nadir_100m.translation)) < 1e-9

    def test_single_frame_unchanged(self, hd_intrinsics, nadir_100m):
        frames = _constant_frames(1, nadir_100m, hd_intrinsics)
        out = smooth_pose_sequence(frames)
        assert len(out) == 1
        assert np.array_equal(out[0].pose.rotation, nadir_100m.rotation)

    def test_noise_suppression_matches_steady_state(self, hd_intrinsics, nadir_100m):
        # steady-state variance of the scalar random-walk filter:
        # P = (-q + sqrt(q^2 + 4 q r)) / 2
        q_std, r_std = 0.005, 0.1
        q, r = q_std**2, r_std**2
        p_inf = (-q + np.sqrt(q * q + 4 * q * r)) / 2.0
        rng = np.random.default_rng(8)
        frames = _constant_frames(
            500, nadir_100m, hd_intrinsics, center_noise=r_std, rot_noise=0.002, rng=rng
        )
        out = smooth_pose_sequence(frames, process_noise=q_std, measurement_noise=r_std)
        centers = np.stack([f.pose.center for f in out[100:]])
        err = centers - nadir_100m.center
        std = float(np.sqrt(np.mean(err**2)))
        assert std < 0.03
        assert 0.3 * np.sqrt(p_inf) < std < 3.0 * np.sqrt(p_inf)

    def test_unlocalized_frames_interpolated(self, hd_intrinsics, nadir_100m):
        frames = _constant_frames(20, nadir_100m, hd_intrinsics)
        frames[7].status = FrameStatus.UNLOCALIZED
        frames[7].pose = None
        out = smooth_pose_sequence(frames)
        assert out[7].status == FrameStatus.INTERPOLATED
        assert out[7].pose is not None
        assert np.max(np.abs(out[7].pose.center - nadir_100m.center)) < 1e-9

    def test_all_unlocalized_errors(self, hd_intrinsics):
        frames = [
            CameraFrame(frame_index=i, timestamp=i / 25.0, intrinsics=hd_intrinsics)
            for i in range(5)
        ]
        with pytest.raises(CameraError):
            smooth_pose_sequence(frames)

    def test_monotone_timestamps_required(self, hd_intrinsics, nadir_100m):
        frames = _constant_frames(5, nadir_100m, hd_intrinsics)
        frames[3].timestamp = frames[2].timestamp
        with pytest.raises(CameraError):
            smooth_pose_sequence(frames)
