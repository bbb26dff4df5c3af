"""Pinhole camera model, robust PnP localization of recording frames against
the reconstructed scene, and temporal smoothing of the resulting pose track.

Conventions: Pose stores the world-to-camera transform, X_cam = R @ X_world + t.
The camera center in world coordinates is c = -R.T @ t.  Pixels are (u, v)
with u along image width.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .rotations import nearest_rotation, skew, so3_exp, so3_log


class CameraError(ValueError):
    pass


class BehindCameraError(CameraError):
    """Raised when a point to project has non-positive camera-frame depth."""


class UnlocalizedError(CameraError):
    """Raised when PnP cannot produce at least the minimum inlier support."""


class FrameStatus(enum.Enum):
    LOCALIZED = "LOCALIZED"
    UNLOCALIZED = "UNLOCALIZED"
    INTERPOLATED = "INTERPOLATED"


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise CameraError("principal point outside image bounds")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def matrix_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def contains(self, u: float, v: float) -> bool:
        return 0.0 <= u < self.width and 0.0 <= v < self.height


ORTHONORMALITY_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if R.shape != (3, 3):
            raise CameraError("rotation must be 3x3")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHONORMALITY_TOL:
            raise CameraError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMALITY_TOL:
            raise CameraError("rotation determinant is not +1 within 1e-9")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, c = -R.T @ t."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, X: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(X, dtype=float) + self.translation

    def camera_to_world(self, Xc: np.ndarray) -> np.ndarray:
        return self.rotation.T @ (np.asarray(Xc, dtype=float) - self.translation)


@dataclass(frozen=True)
class Correspondence:
    """A 2D pixel measurement of a known 3D scene point."""

    pixel: np.ndarray
    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixel", np.asarray(self.pixel, dtype=float).reshape(2))
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(3))


@dataclass
class CameraFrame:
    """Calibration state of one recording frame."""

    frame_index: int
    timestamp: float
    intrinsics: Intrinsics
    pose: Pose | None = None
    gps_prior: np.ndarray | None = None
    inlier_count: int = 0
    rms_reprojection: float = float("nan")
    status: FrameStatus = FrameStatus.UNLOCALIZED


def project(K: Intrinsics, T: Pose, X: np.ndarray) -> tuple[float, float]:
    """Pinhole projection of a world point; raises BehindCameraError for z <= 0.

    An out-of-bounds projection is *not* an error here: callers distinguish it
    via :meth:`Intrinsics.contains`.
    """
    p = T.world_to_camera(X)
    if p[2] <= 0.0:
        raise BehindCameraError(f"point has camera depth {p[2]:.6g} <= 0")
    u = K.fx * (p[0] / p[2]) + K.cx
    v = K.fy * (p[1] / p[2]) + K.cy
    return float(u), float(v)


def project_many(K: Intrinsics, T: Pose, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns (pixels (N,2), depths (N,))."""
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    P = X @ T.rotation.T + T.translation
    z = P[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * (P[:, 0] / z) + K.cx
        v = K.fy * (P[:, 1] / z) + K.cy
    return np.stack([u, v], axis=1), z


# ---------------------------------------------------------------------------
# P3P minimal solver (Grunert's quartic) and absolute orientation
# ---------------------------------------------------------------------------


def kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid transform (R, t) minimizing ||R @ src_i + t - dst_i||^2."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    H = (src - src_c).T @ (dst - dst_c)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(Vt.T @ U.T)))])
    R = Vt.T @ D @ U.T
    t = dst_c - R @ src_c
    return R, t


def p3p_solutions(points: np.ndarray, bearings: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Candidate world-to-camera poses from 3 points and their unit bearings.

    Classical Grunert formulation: solve the quartic in the distance ratio,
    recover per-point camera depths, then align with Kabsch.  Up to four
    solutions; disambiguation is left to the RANSAC scoring loop.
    """
    P1, P2, P3 = (np.asarray(p, dtype=float) for p in points)
    f1, f2, f3 = (np.asarray(b, dtype=float) for b in bearings)

    a = np.linalg.norm(P2 - P3)
    b = np.linalg.norm(P1 - P3)
    c = np.linalg.norm(P1 - P2)
    if min(a, b, c) < 1e-9:
        return []
    # collinear world points are degenerate for pose recovery
    if np.linalg.norm(np.cross(P2 - P1, P3 - P1)) < 1e-9 * max(a, b, c) ** 2:
        return []

    cos_a = float(np.dot(f2, f3))
    cos_b = float(np.dot(f1, f3))
    cos_g = float(np.dot(f1, f2))

    a2 = (a / b) ** 2
    c2 = (c / b) ** 2
    ac = (a * a - c * c) / (b * b)
    apc = (a * a + c * c) / (b * b)

    A4 = (ac - 1.0) ** 2 - 4.0 * c2 * cos_a**2
    A3 = 4.0 * (
        ac * (1.0 - ac) * cos_b
        - (1.0 - apc) * cos_a * cos_g
        + 2.0 * c2 * cos_a**2 * cos_b
    )
    A2 = 2.0 * (
        ac**2
        - 1.0
        + 2.0 * ac**2 * cos_b**2
        + 2.0 * (1.0 - c2) * cos_a**2
        - 4.0 * apc * cos_a * cos_b * cos_g
        + 2.0 * (1.0 - a2) * cos_g**2
    )
    A1 = 4.0 * (
        -ac * (1.0 + ac) * cos_b
        + 2.0 * a2 * cos_g**2 * cos_b
        - (1.0 - apc) * cos_a * cos_g
    )
    A0 = (1.0 + ac) ** 2 - 4.0 * a2 * cos_g**2

    coeffs = np.array([A4, A3, A2, A1, A0])
    if np.max(np.abs(coeffs)) < 1e-14:
        return []
    roots = np.roots(coeffs)

    solutions = []
    for root in roots:
        if abs(root.imag) > 1e-8 * max(1.0, abs(root.real)):
            continue
        v = float(root.real)
        if v <= 0.0:
            continue
        denom = 2.0 * (cos_g - v * cos_a)
        if abs(denom) < 1e-12:
            continue
        u = ((-1.0 + ac) * v * v - 2.0 * ac * cos_b * v + 1.0 + ac) / denom
        if u <= 0.0:
            continue
        s1_sq = (b * b) / (1.0 + v * v - 2.0 * v * cos_b)
        if s1_sq <= 0.0:
            continue
        s1 = float(np.sqrt(s1_sq))
        s2 = u * s1
        s3 = v * s1
        cam_pts = np.stack([s1 * f1, s2 * f2, s3 * f3])
        R, t = kabsch(np.stack([P1, P2, P3]), cam_pts)
        solutions.append((R, t))
    return solutions


# ---------------------------------------------------------------------------
# Robust PnP: RANSAC over P3P samples + Levenberg-Marquardt refinement
# ---------------------------------------------------------------------------


@dataclass
class RansacConfig:
    max_iterations: int = 2000
    inlier_threshold_px: float = 3.0
    confidence: float = 0.999
    huber_threshold_px: float = 2.0
    min_inliers: int = 6
    refine_focal: bool = False
    max_refine_iterations: int = 50


@dataclass
class LocalizationResult:
    pose: Pose
    intrinsics: Intrinsics
    inlier_indices: np.ndarray
    rms_reprojection: float
    iterations: int
    cost_trace: list[float] = field(default_factory=list)


def _huber_weights(errors: np.ndarray, delta: float) -> np.ndarray:
    """IRLS weights for the Huber kernel: 1 inside delta, delta/e outside."""
    w = np.ones_like(errors)
    mask = errors > delta
    w[mask] = delta / errors[mask]
    return w


def _huber_cost(errors: np.ndarray, delta: float) -> float:
    quad = errors <= delta
    cost = np.sum(errors[quad] ** 2)
    cost += np.sum(delta * (2.0 * errors[~quad] - delta))
    return float(cost)


def _reprojection_errors(K: Intrinsics, pose: Pose, pixels, points) -> np.ndarray:
    proj, z = project_many(K, pose, points)
    err = np.linalg.norm(proj - pixels, axis=1)
    err[z <= 0] = np.inf
    return err


def _refine_pose_lm(
    K: Intrinsics,
    pose: Pose,
    pixels: np.ndarray,
    points: np.ndarray,
    huber_delta: float,
    max_iterations: int,
    refine_focal: bool,
) -> tuple[Pose, Intrinsics, list[float]]:
    """Levenberg-Marquardt on the Huber-robustified reprojection cost.

    Steps are accepted only when the total cost decreases, so the cost trace
    is monotone non-increasing by construction.
    """
    R = pose.rotation.copy()
    t = pose.translation.copy()
    fx, fy = K.fx, K.fy
    mu = 1e-4
    n_params = 8 if refine_focal else 6

    def current_cost(Rc, tc, fxc, fyc):
        Kc = replace(K, fx=fxc, fy=fyc)
        err = _reprojection_errors(Kc, Pose(nearest_rotation(Rc), tc), pixels, points)
        return _huber_cost(err[np.isfinite(err)], huber_delta) + 1e12 * np.sum(~np.isfinite(err))

    cost = current_cost(R, t, fx, fy)
    trace = [cost]

    for _ in range(max_iterations):
        P = points @ R.T + t
        z = P[:, 2]
        valid = z > 1e-9
        if not np.any(valid):
            break
        Pv = P[valid]
        zv = Pv[:, 2]
        proj = np.stack([fx * Pv[:, 0] / zv + K.cx, fy * Pv[:, 1] / zv + K.cy], axis=1)
        res = (proj - pixels[valid]).reshape(-1)
        errs = np.linalg.norm(proj - pixels[valid], axis=1)
        w = np.sqrt(np.repeat(_huber_weights(errs, huber_delta), 2))

        n = Pv.shape[0]
        J = np.zeros((2 * n, n_params))
        duv_dp = np.zeros((n, 2, 3))
        duv_dp[:, 0, 0] = fx / zv
        duv_dp[:, 0, 2] = -fx * Pv[:, 0] / zv**2
        duv_dp[:, 1, 1] = fy / zv
        duv_dp[:, 1, 2] = -fy * Pv[:, 1] / zv**2
        # left perturbation R <- exp(d) R: d(RX)/dd = -skew(RX) = -skew(P - t)
        rx = Pv - t
        dp_dtheta = np.empty((n, 3, 3))
        for i in range(n):
            dp_dtheta[i] = -skew(rx[i])
        J[:, 0:3] = np.einsum("nij,njk->nik", duv_dp, dp_dtheta).reshape(2 * n, 3)
        J[:, 3:6] = duv_dp.reshape(2 * n, 3)
        if refine_focal:
            J[0::2, 6] = Pv[:, 0] / zv
            J[1::2, 7] = Pv[:, 1] / zv

        Jw = J * w[:, None]
        rw = res * w
        H = Jw.T @ Jw
        g = Jw.T @ rw
        if np.linalg.norm(g, ord=np.inf) < 1e-12:
            break

        improved = False
        for _ in range(12):
            try:
                delta = np.linalg.solve(H + mu * np.diag(np.diag(H)) + 1e-15 * np.eye(n_params), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            R_new = nearest_rotation(so3_exp(delta[0:3]) @ R)
            t_new = t + delta[3:6]
            fx_new = fx + (delta[6] if refine_focal else 0.0)
            fy_new = fy + (delta[7] if refine_focal else 0.0)
            if fx_new <= 0 or fy_new <= 0:
                mu *= 10.0
                continue
            new_cost = current_cost(R_new, t_new, fx_new, fy_new)
            if new_cost < cost:
                R, t, fx, fy = R_new, t_new, fx_new, fy_new
                cost = new_cost
                trace.append(cost)
                mu = max(mu * 0.3, 1e-12)
                improved = True
                break
            mu *= 10.0
        if not improved:
            break
        if len(trace) >= 2 and trace[-2] - trace[-1] < 1e-14 * max(trace[-2], 1.0):
            break

    K_out = replace(K, fx=fx, fy=fy)
    return Pose(nearest_rotation(R), t), K_out, trace


def localize_frame(
    correspondences: list[Correspondence],
    intrinsics: Intrinsics,
    init_pose: Pose | None = None,
    cfg: RansacConfig | None = None,
    rng: np.random.Generator | None = None,
) -> LocalizationResult:
    """Robust camera pose from 2D-3D correspondences.

    RANSAC over P3P minimal samples selects an inlier set, then LM minimizes
    the Huber-robustified reprojection error over the inliers.  The result is
    invariant to the input ordering for a fixed RANSAC seed because the
    correspondence list is canonically sorted before sampling.

    Raises UnlocalizedError when fewer than ``cfg.min_inliers`` inliers
    support the best hypothesis.
    """
    cfg = cfg or RansacConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if len(correspondences) < cfg.min_inliers:
        raise UnlocalizedError(
            f"{len(correspondences)} correspondences < minimum {cfg.min_inliers}"
        )

    pixels_in = np.stack([c.pixel for c in correspondences])
    points_in = np.stack([c.point for c in correspondences])
    order = np.lexsort(
        (points_in[:, 2], points_in[:, 1], points_in[:, 0], pixels_in[:, 1], pixels_in[:, 0])
    )
    pixels = pixels_in[order]
    points = points_in[order]
    n = len(order)

    Kinv = intrinsics.matrix_inv
    homo = np.concatenate([pixels, np.ones((n, 1))], axis=1)
    bearings = homo @ Kinv.T
    bearings /= np.linalg.norm(bearings, axis=1, keepdims=True)

    def _needed_iterations(count: int) -> int:
        ratio = count / n
        if ratio <= 0:
            return cfg.max_iterations
        denom = np.log(max(1.0 - ratio**3, 1e-16))
        return int(np.ceil(np.log(1.0 - cfg.confidence) / denom))

    best_inliers: np.ndarray | None = None
    best_pose: Pose | None = None
    best_count = 0
    max_iters = cfg.max_iterations
    if init_pose is not None:
        err = _reprojection_errors(intrinsics, init_pose, pixels, points)
        mask = err < cfg.inlier_threshold_px
        if int(mask.sum()) >= 3:
            best_inliers, best_pose, best_count = mask, init_pose, int(mask.sum())
            max_iters = min(cfg.max_iterations, max(1, _needed_iterations(best_count)))

    it = 0
    while it < max_iters:
        it += 1
        idx = rng.choice(n, size=3, replace=False)
        for R, t in p3p_solutions(points[idx], bearings[idx]):
            try:
                pose = Pose(nearest_rotation(R), t)
            except CameraError:
                continue
            err = _reprojection_errors(intrinsics, pose, pixels, points)
            mask = err < cfg.inlier_threshold_px
            count = int(mask.sum())
            if count > best_count:
                best_count = count
                best_inliers = mask
                best_pose = pose
                max_iters = min(cfg.max_iterations, max(it, _needed_iterations(count)))

    if best_pose is None or best_count < cfg.min_inliers:
        raise UnlocalizedError(
            f"RANSAC found only {best_count} inliers (minimum {cfg.min_inliers})"
        )

    # refine, re-gate, refine: the RANSAC inlier set both misses good points
    # and carries gate-grazing ones, so one re-selection pass is worthwhile
    pose, K_out = best_pose, intrinsics
    mask = best_inliers
    trace: list[float] = []
    for _ in range(2):
        in_idx = np.where(mask)[0]
        pose, K_out, trace = _refine_pose_lm(
            K_out,
            pose,
            pixels[in_idx],
            points[in_idx],
            cfg.huber_threshold_px,
            cfg.max_refine_iterations,
            cfg.refine_focal,
        )
        err = _reprojection_errors(K_out, pose, pixels, points)
        new_mask = err < cfg.inlier_threshold_px
        if int(new_mask.sum()) < cfg.min_inliers:
            raise UnlocalizedError(
                f"refinement retained only {int(new_mask.sum())} inliers"
            )
        if np.array_equal(new_mask, mask):
            mask = new_mask
            break
        mask = new_mask
    final_idx = np.where(mask)[0]
    rms = float(np.sqrt(np.mean(err[final_idx] ** 2)))
    return LocalizationResult(
        pose=pose,
        intrinsics=K_out,
        inlier_indices=np.sort(order[final_idx]),
        rms_reprojection=rms,
        iterations=it,
        cost_trace=trace,
    )


# ---------------------------------------------------------------------------
# Temporal pose smoothing (random-walk Kalman filter)
# ---------------------------------------------------------------------------


def smooth_pose_sequence(
    frames: list[CameraFrame],
    process_noise: float = 0.01,
    measurement_noise: float = 0.1,
    rot_process_noise: float = 0.001,
    rot_measurement_noise: float = 0.01,
) -> list[CameraFrame]:
    """Constant-position Kalman filter over camera center and orientation.

    The camera is quasi-stationary, so a random-walk model is used for the
    center and for the orientation, the latter filtered in the 3-parameter
    tangent space around the running estimate.  UNLOCALIZED frames are filled
    by prediction and flagged INTERPOLATED.
    """
    if not frames:
        raise CameraError("empty frame sequence")
    ts = [f.timestamp for f in frames]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise CameraError("timestamps must be strictly increasing")
    localized = [f for f in frames if f.status == FrameStatus.LOCALIZED and f.pose is not None]
    if not localized:
        raise CameraError("all frames unlocalized; nothing to smooth")
    if len(frames) == 1:
        return [replace_frame(frames[0], frames[0].pose, frames[0].status)]

    q_c = process_noise**2
    r_c = measurement_noise**2
    q_r = rot_process_noise**2
    r_r = rot_measurement_noise**2

    first = localized[0]
    center = first.pose.center.copy()
    R_est = first.pose.rotation.copy()
    P_c = np.full(3, r_c)
    P_r = np.full(3, r_r)

    out: list[CameraFrame] = []
    for f in frames:
        P_c = P_c + q_c
        P_r = P_r + q_r
        if f.status == FrameStatus.LOCALIZED and f.pose is not None:
            # center update (three independent scalar filters)
            K_c = P_c / (P_c + r_c)
            center = center + K_c * (f.pose.center - center)
            P_c = (1.0 - K_c) * P_c
            # orientation update in the tangent space of the running estimate
            innov = so3_log(f.pose.rotation @ R_est.T)
            K_r = P_r / (P_r + r_r)
            R_est = nearest_rotation(so3_exp(K_r * innov) @ R_est)
            P_r = (1.0 - K_r) * P_r
            status = FrameStatus.LOCALIZED
        else:
            status = FrameStatus.INTERPOLATED
        pose = Pose(R_est.copy(), -R_est @ center)
        out.append(replace_frame(f, pose, status))
    return out


def replace_frame(f: CameraFrame, pose: Pose | None, status: FrameStatus) -> CameraFrame:
    return CameraFrame(
        frame_index=f.frame_index,
        timestamp=f.timestamp,
        intrinsics=f.intrinsics,
        pose=pose,
        gps_prior=f.gps_prior,
        inlier_count=f.inlier_count,
        rms_reprojection=f.rms_reprojection,
        status=status,
    )
