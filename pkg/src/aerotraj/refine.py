"""Turns raw monocular camera-frame detections into ground-consistent,
world-frame 6-DoF boxes.

The detector's depth is its weakest output; casting a ray through the
detected ground-center pixel onto the reconstructed ground replaces the
depth entirely whenever the ray hits, which is what makes the refined
positions accurate.  Orientation keeps the detector's heading but takes
roll/pitch from the local ground normal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .camera import CameraFrame, FrameStatus, Intrinsics, Pose
from .categories import validate_category
from .ground import GroundSurface
from .mesh import TriangleMesh, face_normal, ray_intersect
from .rotations import rot_x, rot_y, rot_z


class RefineError(ValueError):
    pass


class RefinementFlag(enum.Enum):
    GROUND_SNAPPED = "GROUND_SNAPPED"
    DEPTH_FALLBACK = "DEPTH_FALLBACK"


@dataclass
class Detection3D:
    """One per-frame monocular detection, camera frame, before refinement."""

    frame_index: int
    category: str
    score: float
    bbox2d: np.ndarray  # (u_min, v_min, u_max, v_max)
    dimensions: np.ndarray  # (l, w, h) meters
    orientation_cam: np.ndarray  # 3x3, camera frame
    depth: float  # Z_c meters
    ground_center_px: np.ndarray  # (u, v)

    def __post_init__(self):
        validate_category(self.category)
        self.bbox2d = np.asarray(self.bbox2d, dtype=float).reshape(4)
        self.dimensions = np.asarray(self.dimensions, dtype=float).reshape(3)
        self.orientation_cam = np.asarray(self.orientation_cam, dtype=float).reshape(3, 3)
        self.ground_center_px = np.asarray(self.ground_center_px, dtype=float).reshape(2)
        if np.any(self.dimensions <= 0):
            raise RefineError("box dimensions must be positive")
        if self.depth <= 0:
            raise RefineError("detection depth must be positive")


@dataclass
class RefinedDetection:
    frame_index: int
    category: str
    score: float
    position_world: np.ndarray
    orientation_world: np.ndarray
    dimensions: np.ndarray
    flag: RefinementFlag


def backproject(K: Intrinsics, x_p, Z_c: float) -> np.ndarray:
    """Camera-frame point of a pixel at known depth: K^-1 [u v 1]^T * Z_c."""
    if Z_c <= 0:
        raise RefineError("depth must be positive")
    u, v = float(x_p[0]), float(x_p[1])
    ray = K.matrix_inv @ np.array([u, v, 1.0])
    return ray * Z_c


def decompose_euler(R: np.ndarray) -> tuple[float, float, float]:
    """(phi, theta, psi) such that R = Rz(psi) @ Ry(theta) @ Rx(phi).

    theta is taken on the (-pi/2, pi/2) branch; at gimbal lock
    (|cos theta| ~ 0) phi is set to 0.
    """
    R = np.asarray(R, dtype=float)
    s_theta = -R[2, 0]
    s_theta = min(1.0, max(-1.0, s_theta))
    theta = float(np.arcsin(s_theta))
    if abs(np.cos(theta)) < 1e-8:
        phi = 0.0
        psi = float(np.arctan2(-R[0, 1], R[1, 1]))
    else:
        phi = float(np.arctan2(R[2, 1], R[2, 2]))
        psi = float(np.arctan2(R[1, 0], R[0, 0]))
    return phi, theta, psi


def compose_euler(phi: float, theta: float, psi: float) -> np.ndarray:
    """Inverse of :func:`decompose_euler`."""
    return rot_z(psi) @ rot_y(theta) @ rot_x(phi)


def ground_ray(K: Intrinsics, T: Pose, x_p) -> tuple[np.ndarray, np.ndarray]:
    """World-frame (origin, unit direction) of the ray through pixel x_p."""
    u, v = float(x_p[0]), float(x_p[1])
    d_cam = K.matrix_inv @ np.array([u, v, 1.0])
    d_world = T.rotation.T @ d_cam
    d_world = d_world / np.linalg.norm(d_world)
    return T.center, d_world


def _domain_interval(surface: GroundSurface, origin, direction):
    """Parameter range [t_lo, t_hi] where the ray plan position stays in-domain."""
    t_lo, t_hi = 1e-9, np.inf
    for axis, (lo, hi) in enumerate(((surface.x0, surface.x1), (surface.y0, surface.y1))):
        o, d = origin[axis], direction[axis]
        if abs(d) < 1e-14:
            if not lo <= o <= hi:
                return None
            continue
        ta, tb = (lo - o) / d, (hi - o) / d
        t_lo = max(t_lo, min(ta, tb))
        t_hi = min(t_hi, max(ta, tb))
    if t_hi <= t_lo:
        return None
    return t_lo, t_hi


def _intersect_surface_ray_bracket(surface: GroundSurface, origin, direction):
    """Sampled bracket + bisection; slow but dependable fallback path."""
    interval = _domain_interval(surface, origin, direction)
    if interval is None:
        return None
    t_lo, t_hi = interval
    if not np.isfinite(t_hi):
        t_hi = t_lo + 10.0 * (abs(origin[2]) + np.ptp(surface.ctrl_z) + 1.0)
    ts = np.linspace(t_lo, t_hi, 128)
    pts = origin[None, :] + ts[:, None] * direction[None, :]
    z, _, _ = surface.derivatives(pts[:, 0], pts[:, 1])
    f = pts[:, 2] - z
    sign_change = np.where(f[:-1] * f[1:] <= 0)[0]
    if len(sign_change) == 0:
        return None
    a, b = ts[sign_change[0]], ts[sign_change[0] + 1]
    for _ in range(80):
        m = 0.5 * (a + b)
        pm = origin + m * direction
        zm = float(surface.evaluate(pm[0], pm[1]))
        if (pm[2] - zm) * f[sign_change[0]] > 0:
            a = m
        else:
            b = m
        if b - a < 1e-12:
            break
    t = 0.5 * (a + b)
    p = origin + t * direction
    z, dzdx, dzdy = surface.derivatives(p[0], p[1])
    n = np.array([-dzdx, -dzdy, 1.0])
    n /= np.linalg.norm(n)
    return p, float(t), n


def intersect_surface_rays(surface: GroundSurface, origins: np.ndarray, directions: np.ndarray):
    """Batched Newton solve of ray_z(t) = S(ray_xy(t)) for many rays.

    Returns a list with one entry per ray: (point, distance, normal) or None.
    Rays where Newton diverges are retried with a bracketed bisection.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    n_rays = len(origins)
    z_ref = float(np.mean(surface.ctrl_z))
    dz = directions[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(dz) > 1e-9, (z_ref - origins[:, 2]) / dz, 1.0)
    t = np.where((t > 0) & np.isfinite(t), t, 1.0)

    active = np.ones(n_rays, dtype=bool)
    failed = np.zeros(n_rays, dtype=bool)
    for _ in range(50):
        if not active.any():
            break
        idx = np.where(active)[0]
        p = origins[idx] + t[idx, None] * directions[idx]
        inside = surface.contains(p[:, 0], p[:, 1])
        failed[idx[~inside]] = True
        active[idx[~inside]] = False
        idx = idx[inside]
        if len(idx) == 0:
            break
        p = p[inside]
        z, dzdx, dzdy = surface.derivatives(p[:, 0], p[:, 1])
        f = p[:, 2] - z
        df = directions[idx, 2] - dzdx * directions[idx, 0] - dzdy * directions[idx, 1]
        done = np.abs(f) < 1e-10
        active[idx[done]] = False
        step_idx = idx[~done]
        if len(step_idx) == 0:
            continue
        bad = np.abs(df[~done]) < 1e-14
        failed[step_idx[bad]] = True
        active[step_idx[bad]] = False
        step_idx = step_idx[~bad]
        t_new = t[step_idx] - f[~done][~bad] / df[~done][~bad]
        diverged = ~np.isfinite(t_new) | (t_new <= 0)
        failed[step_idx[diverged]] = True
        active[step_idx[diverged]] = False
        t[step_idx[~diverged]] = t_new[~diverged]
    failed |= active  # Newton budget exhausted

    results: list[tuple | None] = [None] * n_rays
    ok = np.where(~failed)[0]
    if len(ok):
        p = origins[ok] + t[ok, None] * directions[ok]
        z, dzdx, dzdy = surface.derivatives(p[:, 0], p[:, 1])
        for j, k in enumerate(ok):
            if t[k] <= 1e-9 or abs(p[j, 2] - z[j]) > 1e-6:
                results[k] = _intersect_surface_ray_bracket(surface, origins[k], directions[k])
                continue
            n = np.array([-dzdx[j], -dzdy[j], 1.0])
            n /= np.linalg.norm(n)
            results[k] = (p[j].copy(), float(t[k]), n)
    for k in np.where(failed)[0]:
        results[k] = _intersect_surface_ray_bracket(surface, origins[k], directions[k])
    return results


def _intersect_surface_ray(surface: GroundSurface, origin, direction):
    return intersect_surface_rays(surface, origin[None, :], direction[None, :])[0]


def snap_to_ground(
    K: Intrinsics,
    T: Pose,
    x_p,
    ground,
    fallback_depth: float | None = None,
):
    """Intersect the pixel ray with the ground; fall back to detector depth.

    Returns (X_c_star, flag, world_point, ground_normal_world).  On a ray
    miss the camera-frame point comes from :func:`backproject` and the
    normal is straight up.
    """
    origin, direction = ground_ray(K, T, x_p)
    hit = None
    if isinstance(ground, TriangleMesh):
        ray_hit = ray_intersect(ground, origin, direction)
        if ray_hit is not None:
            hit = (ray_hit.point, ray_hit.distance, face_normal(ground, ray_hit.face_index))
    elif isinstance(ground, GroundSurface):
        hit = _intersect_surface_ray(ground, origin, direction)
    else:
        raise RefineError(f"unsupported ground type {type(ground).__name__}")

    if hit is None:
        if fallback_depth is None:
            raise RefineError("ray missed the ground and no fallback depth given")
        Xc = backproject(K, x_p, fallback_depth)
        Xw = T.camera_to_world(Xc)
        return Xc, RefinementFlag.DEPTH_FALLBACK, Xw, np.array([0.0, 0.0, 1.0])

    world_point, _, normal = hit
    Xc = T.world_to_camera(world_point)
    return Xc, RefinementFlag.GROUND_SNAPPED, world_point, normal


def ground_align_orientation(
    R_c: np.ndarray, ground_normal_world: np.ndarray, T: Pose
) -> np.ndarray:
    """Ground-consistent camera-frame orientation.

    The box keeps its heading (yaw about the ground normal); roll and pitch
    are replaced so the box up-axis matches the ground normal.  Implemented
    by projecting the heading onto the ground tangent plane, which makes the
    operation exactly idempotent.
    """
    n = np.asarray(ground_normal_world, dtype=float)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise RefineError("degenerate ground normal")
    n = n / norm
    if n[2] <= 0:
        raise RefineError("ground normal must point upward")

    R_cw = T.rotation.T
    heading_world = R_cw @ (np.asarray(R_c, dtype=float) @ np.array([1.0, 0.0, 0.0]))
    tangent = heading_world - np.dot(heading_world, n) * n
    t_norm = np.linalg.norm(tangent)
    if t_norm < 1e-9:
        # heading parallel to the normal: fall back to the box lateral axis
        lateral = R_cw @ (np.asarray(R_c, dtype=float) @ np.array([0.0, 1.0, 0.0]))
        tangent = np.cross(np.cross(n, lateral), n)
        t_norm = np.linalg.norm(tangent)
        if t_norm < 1e-9:
            raise RefineError("cannot derive a heading tangent to the ground")
    x_axis = tangent / t_norm
    y_axis = np.cross(n, x_axis)
    R_w = np.stack([x_axis, y_axis, n], axis=1)
    return T.rotation @ R_w


def to_world(X_c, R_c, T: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Camera-frame box to world frame using the camera-to-world transform."""
    R_cw = T.rotation.T
    X_w = R_cw @ np.asarray(X_c, dtype=float) + T.center
    R_w = R_cw @ np.asarray(R_c, dtype=float)
    return X_w, R_w


def refine_detection(d: Detection3D, frame: CameraFrame, ground) -> RefinedDetection:
    """snap_to_ground -> ground_align_orientation -> to_world."""
    if frame.status == FrameStatus.UNLOCALIZED or frame.pose is None:
        raise RefineError(f"frame {frame.frame_index} is unlocalized")
    K, T = frame.intrinsics, frame.pose
    Xc, flag, _, normal = snap_to_ground(K, T, d.ground_center_px, ground, fallback_depth=d.depth)
    R_c_star = ground_align_orientation(d.orientation_cam, normal, T)
    X_w, R_w = to_world(Xc, R_c_star, T)
    return RefinedDetection(
        frame_index=d.frame_index,
        category=d.category,
        score=d.score,
        position_world=X_w,
        orientation_world=R_w,
        dimensions=d.dimensions.copy(),
        flag=flag,
    )


def refine_detections(
    detections: list[Detection3D],
    frames: dict[int, CameraFrame],
    ground,
) -> list[RefinedDetection]:
    """Refine a batch of detections; detections on unlocalized frames are dropped.

    Detections are grouped per frame so spline-ground ray casting runs in
    vectorized batches.
    """
    by_frame: dict[int, list[Detection3D]] = {}
    for d in detections:
        by_frame.setdefault(d.frame_index, []).append(d)

    out: list[RefinedDetection] = []
    for frame_index in sorted(by_frame):
        frame = frames.get(frame_index)
        if frame is None or frame.status == FrameStatus.UNLOCALIZED or frame.pose is None:
            continue
        group = by_frame[frame_index]
        K, T = frame.intrinsics, frame.pose
        if isinstance(ground, GroundSurface):
            rays = [ground_ray(K, T, d.ground_center_px) for d in group]
            hits = intersect_surface_rays(
                ground,
                np.stack([r[0] for r in rays]),
                np.stack([r[1] for r in rays]),
            )
        else:
            hits = []
            for d in group:
                origin, direction = ground_ray(K, T, d.ground_center_px)
                ray_hit = ray_intersect(ground, origin, direction)
                hits.append(
                    None
                    if ray_hit is None
                    else (ray_hit.point, ray_hit.distance, face_normal(ground, ray_hit.face_index))
                )
        for d, hit in zip(group, hits):
            if hit is None:
                Xc = backproject(K, d.ground_center_px, d.depth)
                flag = RefinementFlag.DEPTH_FALLBACK
                normal = np.array([0.0, 0.0, 1.0])
            else:
                world_point, _, normal = hit
                Xc = T.world_to_camera(world_point)
                flag = RefinementFlag.GROUND_SNAPPED
            R_c_star = ground_align_orientation(d.orientation_cam, normal, T)
            X_w, R_w = to_world(Xc, R_c_star, T)
            out.append(
                RefinedDetection(
                    frame_index=d.frame_index,
                    category=d.category,
                    score=d.score,
                    position_world=X_w,
                    orientation_world=R_w,
                    dimensions=d.dimensions.copy(),
                    flag=flag,
                )
            )
    return out
