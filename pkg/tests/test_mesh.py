from __future__ import annotations

import numpy as np
import pytest

from aerotraj.mesh import (
    MeshError,
    TriangleMesh,
    face_normal,
    make_grid_mesh,
    ray_intersect,
    sample_surface,
)


def brute_force_intersect(mesh, origin, direction):
    """Independent oracle: Moeller-Trumbore over every face, no acceleration."""
    v0 = mesh.vertices[mesh.faces[:, 0]]
    e1 = mesh.vertices[mesh.faces[:, 1]] - v0
    e2 = mesh.vertices[mesh.faces[:, 2]] - v0
    p = np.cross(direction[None, :], e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-12
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    tvec = origin[None, :] - v0
    u = np.einsum("ij,ij->i", tvec, p) * inv
    q = np.cross(tvec, e1)
    v = (q @ direction) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    ok &= (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1 + 1e-9) & (t > 1e-12)
    if not ok.any():
        return None
    idx = np.where(ok)[0]
    j = idx[np.argmin(t[idx])]
    return float(t[j]), int(j)


@pytest.fixture
def unit_triangle():
    return TriangleMesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 1, 2]]),
    )


@pytest.fixture
def rolling_mesh():
    return make_grid_mesh(
        -20, 20, -20, 20, 24, 24, lambda x, y: 0.5 * np.sin(0.3 * x) * np.cos(0.2 * y)
    )


class TestRayIntersect:
    def test_axis_aligned_hit(self, unit_triangle):
        hit = ray_intersect(unit_triangle, np.array([0.25, 0.25, 1.0]), np.array([0.0, 0.0, -1.0]))
        assert hit is not None
        assert hit.point == pytest.approx([0.25, 0.25, 0.0])
        assert hit.distance == pytest.approx(1.0)
        assert hit.face_index == 0
        assert hit.barycentric.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(hit.barycentric >= -1e-9)

    def test_parallel_ray_misses(self, unit_triangle):
        hit = ray_intersect(unit_triangle, np.array([0.25, 0.25, 1.0]), np.array([1.0, 0.0, 0.0]))
        assert hit is None

    def test_behind_origin_misses(self, unit_triangle):
        hit = ray_intersect(unit_triangle, np.array([0.25, 0.25, 1.0]), np.array([0.0, 0.0, 1.0]))
        assert hit is None

    def test_non_unit_direction_rejected(self, unit_triangle):
        with pytest.raises(MeshError):
            ray_intersect(unit_triangle, np.zeros(3), np.array([0.0, 0.0, -2.0]))

    def test_bvh_equals_brute_force_10k_rays(self, rolling_mesh):
        rng = np.random.default_rng(5)
        n_mismatch = 0
        for _ in range(10000):
            origin = rng.uniform([-18, -18, 5], [18, 18, 15])
            target = rng.uniform([-18, -18, -1], [18, 18, 1])
            d = target - origin
            d = d / np.linalg.norm(d)
            hit = ray_intersect(rolling_mesh, origin, d)
            ref = brute_force_intersect(rolling_mesh, origin, d)
            if hit is None or ref is None:
                assert (hit is None) == (ref is None)
                continue
            if hit.face_index != ref[1] or abs(hit.distance - ref[0]) > 1e-9:
                n_mismatch += 1
        assert n_mismatch == 0

    def test_translation_equivariance(self, rolling_mesh):
        rng = np.random.default_rng(9)
        shift = np.array([13.0, -4.0, 2.5])
        moved = TriangleMesh(rolling_mesh.vertices + shift, rolling_mesh.faces)
        for _ in range(50):
            origin = rng.uniform([-15, -15, 5], [15, 15, 15])
            d = rng.normal(size=3)
            d[2] = -abs(d[2]) - 1.0
            d /= np.linalg.norm(d)
            a = ray_intersect(rolling_mesh, origin, d)
            b = ray_intersect(moved, origin + shift, d)
            assert (a is None) == (b is None)
            if a is not None:
                assert b.point == pytest.approx(a.point + shift, abs=1e-9)


class TestSampleSurface:
    def test_poisson_count_and_containment(self):
        # single right triangle with area 1 m^2
        mesh = TriangleMesh(
            np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            np.array([[0, 1, 2]]),
        )
        pts = sample_surface(mesh, 1000.0, np.random.default_rng(0))
        assert abs(len(pts) - 1000) <= 3 * np.sqrt(1000)
        # inside the triangle: x/2 + y <= 1, x,y >= 0
        assert np.all(pts[:, 0] >= -1e-12)
        assert np.all(pts[:, 1] >= -1e-12)
        assert np.all(pts[:, 0] / 2.0 + pts[:, 1] <= 1.0 + 1e-9)
        assert np.all(np.abs(pts[:, 2]) < 1e-12)

    def test_area_weighted_counts(self):
        # two triangles with areas 1 and 3
        mesh = TriangleMesh(
            np.array(
                [
                    [0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                    [10.0, 0.0, 0.0], [16.0, 0.0, 0.0], [10.0, 1.0, 0.0],
                ]
            ),
            np.array([[0, 1, 2], [3, 4, 5]]),
        )
        pts = sample_surface(mesh, 2000.0, np.random.default_rng(1))
        n_second = int(np.sum(pts[:, 0] >= 9.0))
        n_first = len(pts) - n_second
        ratio = n_second / max(n_first, 1)
        # binomial tolerance around the 3:1 area ratio
        assert ratio == pytest.approx(3.0, rel=0.15)

    def test_degenerate_mesh_errors(self):
        mesh = TriangleMesh(
            np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]),
            np.array([[0, 1, 2]]),
        )
        assert len(mesh.faces) == 0  # cleaned at load
        with pytest.raises(MeshError):
            sample_surface(mesh, 10.0, np.random.default_rng(0))

    def test_points_on_source_plane(self, rolling_mesh):
        # planar mesh: every sample must lie exactly on z = 0.1 x + 3
        mesh = make_grid_mesh(-5, 5, -5, 5, 4, 4, lambda x, y: 0.1 * x + 3.0)
        pts = sample_surface(mesh, 50.0, np.random.default_rng(2))
        assert np.max(np.abs(pts[:, 2] - (0.1 * pts[:, 0] + 3.0))) < 1e-9

    def test_determinism(self, rolling_mesh):
        a = sample_surface(rolling_mesh, 5.0, np.random.default_rng(42))
        b = sample_surface(rolling_mesh, 5.0, np.random.default_rng(42))
        assert np.array_equal(a, b)


class TestObjIo:
    def test_round_trip(self, tmp_path, rolling_mesh):
        path = tmp_path / "mesh.obj"
        rolling_mesh.save_obj(path)
        back = TriangleMesh.load_obj(path)
        assert np.allclose(back.vertices, np.round(rolling_mesh.vertices, 6))
        assert np.array_equal(back.faces, rolling_mesh.faces)

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "bad.obj"
        path.write_text("v 0 0\n")
        with pytest.raises(MeshError):
            TriangleMesh.load_obj(path)

    def test_face_normal_upward(self, unit_triangle):
        n = face_normal(unit_triangle, 0)
        assert n == pytest.approx([0.0, 0.0, 1.0])
