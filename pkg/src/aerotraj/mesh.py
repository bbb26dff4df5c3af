"""Triangle-mesh scene geometry: OBJ-subset loading, exact ray casting via
Moeller-Trumbore accelerated by an axis-aligned BVH, and area-weighted
surface sampling.

Meshes and their BVH are immutable after construction, so concurrent ray
queries need no coordination.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12
PARALLEL_DET = 1e-12
LEAF_SIZE = 4


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class RayHit:
    point: np.ndarray
    face_index: int
    distance: float
    barycentric: np.ndarray


class TriangleMesh:
    """Vertices (V,3) and faces (F,3); degenerate faces dropped at build."""

    def __init__(self, vertices, faces):
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise MeshError("face index out of range")
        areas = _triangle_areas(vertices, faces)
        keep = areas > DEGENERATE_AREA
        dropped = int((~keep).sum())
        if dropped:
            logger.info("dropped %d degenerate faces at load", dropped)
        self.vertices = vertices
        self.faces = faces[keep]
        self.vertices.setflags(write=False)
        self.faces.setflags(write=False)
        self._bvh: _BVH | None = None

    @property
    def bvh(self) -> "_BVH":
        if self._bvh is None:
            self._bvh = _BVH(self.vertices, self.faces)
        return self._bvh

    def areas(self) -> np.ndarray:
        return _triangle_areas(self.vertices, self.faces)

    def total_area(self) -> float:
        return float(self.areas().sum())

    @classmethod
    def load_obj(cls, path) -> "TriangleMesh":
        """ASCII OBJ subset: only ``v`` and ``f`` records are honored."""
        vertices = []
        faces = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                parts = stripped.split()
                if parts[0] == "v":
                    if len(parts) < 4:
                        raise MeshError(f"{path}:{line_no}: malformed vertex record")
                    vertices.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    if len(parts) < 4:
                        raise MeshError(f"{path}:{line_no}: malformed face record")
                    idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
                    faces.append(idx)
                # other record types (vn, vt, ...) are ignored
        mesh = cls(np.array(vertices, dtype=float).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))
        logger.info("loaded mesh %s: %d vertices, %d faces", path, len(mesh.vertices), len(mesh.faces))
        return mesh

    def save_obj(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for v in self.vertices:
                fh.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
            for f in self.faces:
                fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def _triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    if faces.size == 0:
        return np.zeros(0)
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


class _BVH:
    """Median-split BVH over the longest centroid axis, leaf size 4."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray):
        self.v0 = vertices[faces[:, 0]]
        self.edge1 = vertices[faces[:, 1]] - self.v0
        self.edge2 = vertices[faces[:, 2]] - self.v0
        n = len(faces)
        tri_min = np.minimum(np.minimum(vertices[faces[:, 0]], vertices[faces[:, 1]]), vertices[faces[:, 2]])
        tri_max = np.maximum(np.maximum(vertices[faces[:, 0]], vertices[faces[:, 1]]), vertices[faces[:, 2]])
        centroids = (tri_min + tri_max) / 2.0

        self.order = np.arange(n)
        nodes_min, nodes_max, nodes_left, nodes_right, nodes_start, nodes_count = [], [], [], [], [], []

        def build(start: int, count: int) -> int:
            idx = self.order[start : start + count]
            bmin = tri_min[idx].min(axis=0)
            bmax = tri_max[idx].max(axis=0)
            node = len(nodes_min)
            nodes_min.append(bmin)
            nodes_max.append(bmax)
            nodes_left.append(-1)
            nodes_right.append(-1)
            nodes_start.append(start)
            nodes_count.append(count)
            if count <= LEAF_SIZE:
                return node
            cmin = centroids[idx].min(axis=0)
            cmax = centroids[idx].max(axis=0)
            axis = int(np.argmax(cmax - cmin))
            if cmax[axis] - cmin[axis] < 1e-12:
                return node
            local = np.argsort(centroids[idx, axis], kind="stable")
            self.order[start : start + count] = idx[local]
            half = count // 2
            left = build(start, half)
            right = build(start + half, count - half)
            nodes_left[node] = left
            nodes_right[node] = right
            nodes_count[node] = 0
            return node

        if n:
            build(0, n)
        self.nodes_min = np.array(nodes_min).reshape(-1, 3)
        self.nodes_max = np.array(nodes_max).reshape(-1, 3)
        self.nodes_left = np.array(nodes_left, dtype=np.int64)
        self.nodes_right = np.array(nodes_right, dtype=np.int64)
        self.nodes_start = np.array(nodes_start, dtype=np.int64)
        self.nodes_count = np.array(nodes_count, dtype=np.int64)
        self.n_faces = n

    def _leaf_hit(self, node: int, origin, direction, best_t):
        start = self.nodes_start[node]
        count = self.nodes_count[node]
        idx = self.order[start : start + count]
        e1 = self.edge1[idx]
        e2 = self.edge2[idx]
        v0 = self.v0[idx]
        p = np.cross(direction[None, :], e2)
        det = np.einsum("ij,ij->i", e1, p)
        ok = np.abs(det) > PARALLEL_DET
        if not ok.any():
            return None
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origin[None, :] - v0
        u = np.einsum("ij,ij->i", tvec, p) * inv
        q = np.cross(tvec, e1)
        v = (q @ direction) * inv
        t = np.einsum("ij,ij->i", e2, q) * inv
        ok &= (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1.0 + 1e-9) & (t > PARALLEL_DET)
        ok &= t < best_t
        if not ok.any():
            return None
        sub = np.where(ok)[0]
        j = sub[np.argmin(t[sub])]
        return float(t[j]), int(idx[j]), float(u[j]), float(v[j])

    def intersect(self, origin: np.ndarray, direction: np.ndarray):
        if self.n_faces == 0:
            return None
        # huge-but-finite reciprocal keeps the slab test free of 0 * inf NaNs
        safe = np.where(np.abs(direction) > 1e-300, direction, 1e-300)
        inv_dir = np.where(np.abs(direction) > 1e-300, 1.0 / safe, 1e300)
        best = (np.inf, -1, 0.0, 0.0)
        stack = [0]
        while stack:
            node = stack.pop()
            t0 = (self.nodes_min[node] - origin) * inv_dir
            t1 = (self.nodes_max[node] - origin) * inv_dir
            tmin = np.minimum(t0, t1).max()
            tmax = np.maximum(t0, t1).min()
            if tmax < max(tmin, 0.0) or tmin >= best[0]:
                continue
            if self.nodes_count[node] > 0:
                hit = self._leaf_hit(node, origin, direction, best[0])
                if hit is not None and hit[0] < best[0]:
                    best = hit
            else:
                stack.append(self.nodes_right[node])
                stack.append(self.nodes_left[node])
        if best[1] < 0:
            return None
        return best


def ray_intersect(mesh: TriangleMesh, origin, direction) -> RayHit | None:
    """Nearest positive-distance intersection of a unit-direction ray.

    Absence of a hit is a value (None), not an error.
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    direction = np.asarray(direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise MeshError("ray direction must be a unit vector")
    hit = mesh.bvh.intersect(origin, direction)
    if hit is None:
        return None
    t, face, u, v = hit
    return RayHit(
        point=origin + t * direction,
        face_index=face,
        distance=t,
        barycentric=np.array([1.0 - u - v, u, v]),
    )


def face_normal(mesh: TriangleMesh, face_index: int, upward: bool = True) -> np.ndarray:
    a, b, c = mesh.vertices[mesh.faces[face_index]]
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n)
    if norm < 1e-300:
        raise MeshError("degenerate face has no normal")
    n = n / norm
    if upward and n[2] < 0:
        n = -n
    return n


def sample_surface(mesh: TriangleMesh, density: float, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Area-weighted uniform surface sampling at ``density`` points per m^2.

    The total count is Poisson with mean density * area; sampling is
    deterministic for a fixed generator state.
    """
    if density <= 0:
        raise MeshError("density must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    areas = mesh.areas()
    total = float(areas.sum())
    if total <= 0 or len(mesh.faces) == 0:
        raise MeshError("mesh has no positive-area faces to sample")
    count = int(rng.poisson(density * total))
    if count == 0:
        return np.zeros((0, 3))
    tri = rng.choice(len(mesh.faces), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    a = mesh.vertices[mesh.faces[tri, 0]]
    b = mesh.vertices[mesh.faces[tri, 1]]
    c = mesh.vertices[mesh.faces[tri, 2]]
    pts = (1.0 - r1)[:, None] * a + (r1 * (1.0 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return pts


def make_grid_mesh(x0, x1, y0, y1, nx, ny, height_fn) -> TriangleMesh:
    """Regular triangulated height-field mesh; handy for tests and synthesis."""
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    Z = np.vectorize(height_fn)(X, Y) if callable(height_fn) else np.full_like(X, float(height_fn))
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            v00 = i * ny + j
            v01 = i * ny + j + 1
            v10 = (i + 1) * ny + j
            v11 = (i + 1) * ny + j + 1
            faces.append([v00, v10, v11])
            faces.append([v00, v11, v01])
    return TriangleMesh(vertices, np.array(faces, dtype=np.int64))
