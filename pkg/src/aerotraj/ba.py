"""Joint bundle adjustment with a GPS alignment penalty.

Minimizes  L = sum_obs huber(||project(K, T_j, X_k) - x_jk||)
             + lambda * sum_j ||center_j - gps_j||^2

over camera poses and scene points with Levenberg-Marquardt.  Rotations are
updated in their tangent space; the sparse normal equations are solved via a
Schur complement on the points.  With lambda = 0 the problem is gauge-free,
so the first camera is held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics, Pose
from .rotations import nearest_rotation, skew, so3_exp


class BAError(ValueError):
    pass


@dataclass
class BACamera:
    intrinsics: Intrinsics
    pose: Pose
    gps_prior: np.ndarray | None = None

    def __post_init__(self):
        if self.gps_prior is not None:
            self.gps_prior = np.asarray(self.gps_prior, dtype=float).reshape(3)


@dataclass
class BAProblem:
    cameras: list[BACamera]
    points: np.ndarray  # (P, 3)
    cam_indices: np.ndarray  # (M,)
    point_indices: np.ndarray  # (M,)
    pixels: np.ndarray  # (M, 2)
    lam: float = 1.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.cam_indices = np.asarray(self.cam_indices, dtype=np.int64).ravel()
        self.point_indices = np.asarray(self.point_indices, dtype=np.int64).ravel()
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        if not (len(self.cam_indices) == len(self.point_indices) == len(self.pixels)):
            raise BAError("observation arrays have inconsistent lengths")
        if self.lam < 0:
            raise BAError("lambda must be non-negative")

    def validate(self):
        if len(self.cam_indices) and (
            self.cam_indices.min() < 0 or self.cam_indices.max() >= len(self.cameras)
        ):
            raise BAError("observation references an invalid camera index")
        if len(self.point_indices) and (
            self.point_indices.min() < 0 or self.point_indices.max() >= len(self.points)
        ):
            raise BAError("observation references an invalid point index")
        counts = np.bincount(self.point_indices, minlength=len(self.points))
        if np.any(counts < 2):
            bad = int(np.argmin(counts))
            raise BAError(f"point {bad} observed by {int(counts[bad])} < 2 cameras")

    def copy(self) -> "BAProblem":
        return BAProblem(
            cameras=[
                BACamera(
                    c.intrinsics,
                    Pose(c.pose.rotation.copy(), c.pose.translation.copy()),
                    None if c.gps_prior is None else c.gps_prior.copy(),
                )
                for c in self.cameras
            ],
            points=self.points.copy(),
            cam_indices=self.cam_indices.copy(),
            point_indices=self.point_indices.copy(),
            pixels=self.pixels.copy(),
            lam=self.lam,
        )


@dataclass
class BAConfig:
    max_iterations: int = 100
    huber_threshold_px: float = 2.0
    gradient_tol: float = 1e-10
    relative_decrease_tol: float = 1e-12
    initial_damping: float = 1e-6
    fix_first_camera: bool | None = None  # None = auto (fix when gauge-free)


@dataclass
class BAReport:
    initial_loss: float
    final_loss: float
    initial_reproj_rms: float
    final_reproj_rms: float
    initial_gps_rmse: float
    final_gps_rmse: float
    iterations: int
    converged: bool
    loss_trace: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "initial_reproj_rms": self.initial_reproj_rms,
            "final_reproj_rms": self.final_reproj_rms,
            "initial_gps_rmse": self.initial_gps_rmse,
            "final_gps_rmse": self.final_gps_rmse,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _huber(e: np.ndarray, delta: float) -> np.ndarray:
    out = np.where(e <= delta, e**2, delta * (2.0 * e - delta))
    return out


def _huber_weight(e: np.ndarray, delta: float) -> np.ndarray:
    return np.where(e <= delta, 1.0, delta / np.maximum(e, 1e-300))


def reprojection_residuals(problem: BAProblem) -> np.ndarray:
    """Raw (unweighted) reprojection residuals, one row per observation."""
    res = np.zeros((len(problem.pixels), 2))
    for m, (j, k) in enumerate(zip(problem.cam_indices, problem.point_indices)):
        cam = problem.cameras[j]
        p = cam.pose.world_to_camera(problem.points[k])
        if p[2] <= 1e-12:
            res[m] = 1e6
            continue
        K = cam.intrinsics
        res[m, 0] = K.fx * p[0] / p[2] + K.cx - problem.pixels[m, 0]
        res[m, 1] = K.fy * p[1] / p[2] + K.cy - problem.pixels[m, 1]
    return res


def gps_residuals(problem: BAProblem) -> np.ndarray:
    """Per-camera center-minus-prior residuals (unscaled by lambda)."""
    rows = []
    for cam in problem.cameras:
        if cam.gps_prior is not None:
            rows.append(cam.pose.center - cam.gps_prior)
    return np.array(rows).reshape(-1, 3)


def reprojection_rms(problem: BAProblem) -> float:
    res = reprojection_residuals(problem)
    if len(res) == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum(res**2, axis=1))))


def gps_rmse(problem: BAProblem) -> float:
    """sqrt(mean ||center_j - gps_j||^2) over cameras carrying a prior."""
    if any(cam.gps_prior is None for cam in problem.cameras):
        raise BAError("gps_rmse requires a GPS prior on every camera")
    res = gps_residuals(problem)
    return float(np.sqrt(np.mean(np.sum(res**2, axis=1))))


def total_loss(problem: BAProblem, huber_delta: float) -> float:
    res = reprojection_residuals(problem)
    e = np.linalg.norm(res, axis=1)
    loss = float(np.sum(_huber(e, huber_delta)))
    if problem.lam > 0:
        g = gps_residuals(problem)
        loss += problem.lam * float(np.sum(g**2))
    return loss


def _camera_jacobians(cam: BACamera, X: np.ndarray):
    """Analytic blocks for one observation: (residual, J_pose (2,6), J_point (2,3)).

    Pose parameterization is a left perturbation, R <- exp(d_theta) R,
    t <- t + d_t.
    """
    R = cam.pose.rotation
    t = cam.pose.translation
    p = R @ X + t
    K = cam.intrinsics
    z = p[2]
    duv_dp = np.array(
        [[K.fx / z, 0.0, -K.fx * p[0] / z**2], [0.0, K.fy / z, -K.fy * p[1] / z**2]]
    )
    J_theta = duv_dp @ (-skew(p - t))
    J_t = duv_dp
    J_pose = np.concatenate([J_theta, J_t], axis=1)
    J_point = duv_dp @ R
    return p, J_pose, J_point


def _gps_jacobian(cam: BACamera):
    """d center / d (theta, t) for the left-perturbation parameterization."""
    R = cam.pose.rotation
    t = cam.pose.translation
    J = np.zeros((3, 6))
    J[:, 0:3] = -R.T @ skew(t)
    J[:, 3:6] = -R.T
    return J


def solve_ba(problem: BAProblem, cfg: BAConfig | None = None) -> tuple[BAProblem, BAReport]:
    """Levenberg-Marquardt minimization of the geo-referenced BA objective.

    Only steps that decrease the total loss are accepted, so the recorded
    loss trace is non-increasing.  Returns a refined copy and a report.
    """
    cfg = cfg or BAConfig()
    problem.validate()
    work = problem.copy()

    has_gps = problem.lam > 0 and all(c.gps_prior is not None for c in work.cameras)
    fix_first = cfg.fix_first_camera
    if fix_first is None:
        fix_first = not has_gps

    n_cams = len(work.cameras)
    n_pts = len(work.points)
    free_cams = list(range(1 if fix_first else 0, n_cams))
    cam_slot = {j: i for i, j in enumerate(free_cams)}
    nc = 6 * len(free_cams)

    delta = cfg.huber_threshold_px
    loss = total_loss(work, delta)
    report = BAReport(
        initial_loss=loss,
        final_loss=loss,
        initial_reproj_rms=reprojection_rms(work),
        final_reproj_rms=0.0,
        initial_gps_rmse=gps_rmse(work) if has_gps else float("nan"),
        final_gps_rmse=float("nan"),
        iterations=0,
        converged=False,
        loss_trace=[loss],
    )

    mu = cfg.initial_damping
    converged = False
    iterations = 0

    obs_by_point: dict[int, list[int]] = {}
    for m, k in enumerate(work.point_indices):
        obs_by_point.setdefault(int(k), []).append(m)

    for _ in range(cfg.max_iterations):
        # assemble robust-weighted normal equations
        Hcc = np.zeros((nc, nc))
        gc = np.zeros(nc)
        Hpp = np.zeros((n_pts, 3, 3))
        gp = np.zeros((n_pts, 3))
        Hcp: dict[tuple[int, int], np.ndarray] = {}

        res = reprojection_residuals(work)
        errs = np.linalg.norm(res, axis=1)
        weights = _huber_weight(errs, delta)

        for m in range(len(work.pixels)):
            j = int(work.cam_indices[m])
            k = int(work.point_indices[m])
            cam = work.cameras[j]
            _, J_pose, J_point = _camera_jacobians(cam, work.points[k])
            w = weights[m]
            r = res[m]
            Hpp[k] += w * J_point.T @ J_point
            gp[k] -= w * J_point.T @ r
            if j in cam_slot:
                s = cam_slot[j] * 6
                Hcc[s : s + 6, s : s + 6] += w * J_pose.T @ J_pose
                gc[s : s + 6] -= w * J_pose.T @ r
                key = (j, k)
                blk = Hcp.get(key)
                if blk is None:
                    Hcp[key] = w * J_pose.T @ J_point
                else:
                    blk += w * J_pose.T @ J_point

        if has_gps:
            for j, cam in enumerate(work.cameras):
                if j not in cam_slot:
                    continue
                Jg = _gps_jacobian(cam)
                rg = cam.pose.center - cam.gps_prior
                s = cam_slot[j] * 6
                Hcc[s : s + 6, s : s + 6] += work.lam * Jg.T @ Jg
                gc[s : s + 6] -= work.lam * Jg.T @ rg

        grad_norm = max(
            float(np.max(np.abs(gc))) if nc else 0.0, float(np.max(np.abs(gp))) if n_pts else 0.0
        )
        if grad_norm < cfg.gradient_tol:
            converged = True
            break

        accepted = False
        for _ in range(15):
            # damp (Marquardt scaling) and reduce via the point Schur complement
            Hcc_d = Hcc + mu * np.diag(np.diag(Hcc)) + 1e-15 * np.eye(nc)
            Hpp_d = Hpp.copy()
            for k in range(n_pts):
                Hpp_d[k] += mu * np.diag(np.diag(Hpp[k])) + 1e-15 * np.eye(3)
            try:
                Hpp_inv = np.linalg.inv(Hpp_d)
            except np.linalg.LinAlgError:
                mu = max(mu * 10.0, 1e-12)
                continue

            S = Hcc_d.copy()
            rhs = gc.copy()
            for k, ms in obs_by_point.items():
                cams_k = sorted({int(work.cam_indices[m]) for m in ms} & set(cam_slot))
                if not cams_k:
                    continue
                Hpi = Hpp_inv[k]
                for ja in cams_k:
                    Ba = Hcp[(ja, k)]
                    sa = cam_slot[ja] * 6
                    rhs[sa : sa + 6] -= Ba @ (Hpi @ gp[k])
                    for jb in cams_k:
                        Bb = Hcp[(jb, k)]
                        sb = cam_slot[jb] * 6
                        S[sa : sa + 6, sb : sb + 6] -= Ba @ Hpi @ Bb.T
            try:
                dc = np.linalg.solve(S, rhs) if nc else np.zeros(0)
            except np.linalg.LinAlgError:
                mu = max(mu * 10.0, 1e-12)
                continue

            dp = np.zeros((n_pts, 3))
            for k, ms in obs_by_point.items():
                acc = gp[k].copy()
                for m in ms:
                    j = int(work.cam_indices[m])
                    if j in cam_slot:
                        s = cam_slot[j] * 6
                        acc -= Hcp[(j, k)].T @ dc[s : s + 6]
                dp[k] = Hpp_inv[k] @ acc

            candidate = work.copy()
            for j in free_cams:
                s = cam_slot[j] * 6
                dtheta = dc[s : s + 3]
                dt = dc[s + 3 : s + 6]
                old = candidate.cameras[j].pose
                candidate.cameras[j].pose = Pose(
                    nearest_rotation(so3_exp(dtheta) @ old.rotation), old.translation + dt
                )
            candidate.points = candidate.points + dp

            new_loss = total_loss(candidate, delta)
            if new_loss < loss:
                work = candidate
                decrease = loss - new_loss
                loss = new_loss
                report.loss_trace.append(loss)
                mu = max(mu * 0.3, 1e-14)
                accepted = True
                iterations += 1
                if decrease < cfg.relative_decrease_tol * max(loss, 1.0):
                    converged = True
                break
            mu = max(mu * 10.0, 1e-12)

        if not accepted:
            converged = True
            break
        if converged:
            break

    report.final_loss = loss
    report.final_reproj_rms = reprojection_rms(work)
    report.final_gps_rmse = gps_rmse(work) if has_gps else float("nan")
    report.iterations = iterations
    report.converged = converged
    return work, report


# ---------------------------------------------------------------------------
# Jacobian verification
# ---------------------------------------------------------------------------


def _stacked_residuals(problem: BAProblem) -> np.ndarray:
    parts = [reprojection_residuals(problem).ravel()]
    if problem.lam > 0:
        parts.append(np.sqrt(problem.lam) * gps_residuals(problem).ravel())
    return np.concatenate(parts)


def _stacked_jacobian(problem: BAProblem) -> np.ndarray:
    n_cams = len(problem.cameras)
    n_pts = len(problem.points)
    M = len(problem.pixels)
    n_gps = sum(1 for c in problem.cameras if c.gps_prior is not None) if problem.lam > 0 else 0
    J = np.zeros((2 * M + 3 * n_gps, 6 * n_cams + 3 * n_pts))
    for m in range(M):
        j = int(problem.cam_indices[m])
        k = int(problem.point_indices[m])
        _, J_pose, J_point = _camera_jacobians(problem.cameras[j], problem.points[k])
        J[2 * m : 2 * m + 2, 6 * j : 6 * j + 6] = J_pose
        J[2 * m : 2 * m + 2, 6 * n_cams + 3 * k : 6 * n_cams + 3 * k + 3] = J_point
    if problem.lam > 0:
        row = 2 * M
        s = np.sqrt(problem.lam)
        for j, cam in enumerate(problem.cameras):
            if cam.gps_prior is None:
                continue
            J[row : row + 3, 6 * j : 6 * j + 6] = s * _gps_jacobian(cam)
            row += 3
    return J


def _perturbed(problem: BAProblem, x: np.ndarray) -> BAProblem:
    out = problem.copy()
    n_cams = len(out.cameras)
    for j in range(n_cams):
        dtheta = x[6 * j : 6 * j + 3]
        dt = x[6 * j + 3 : 6 * j + 6]
        old = out.cameras[j].pose
        out.cameras[j].pose = Pose(nearest_rotation(so3_exp(dtheta) @ old.rotation), old.translation + dt)
    out.points = out.points + x[6 * n_cams :].reshape(-1, 3)
    return out


def finite_diff_check(problem: BAProblem, step: float = 1e-6) -> float:
    """Max relative deviation between analytic and central-difference Jacobians.

    Intended for small problems (<= 5 cameras, <= 50 points).
    """
    if len(problem.cameras) > 5 or len(problem.points) > 50:
        raise BAError("finite_diff_check is for small problems only")
    J_analytic = _stacked_jacobian(problem)
    n = J_analytic.shape[1]
    J_fd = np.zeros_like(J_analytic)
    for i in range(n):
        x = np.zeros(n)
        x[i] = step
        f_plus = _stacked_residuals(_perturbed(problem, x))
        x[i] = -step
        f_minus = _stacked_residuals(_perturbed(problem, x))
        J_fd[:, i] = (f_plus - f_minus) / (2.0 * step)
    denom = max(float(np.max(np.abs(J_fd))), 1.0)
    return float(np.max(np.abs(J_analytic - J_fd)) / denom)


def gradient_norm(problem: BAProblem, huber_delta: float = 2.0) -> float:
    """Norm of the total-loss gradient; ~0 at a stationary point."""
    res = reprojection_residuals(problem)
    errs = np.linalg.norm(res, axis=1)
    weights = _huber_weight(errs, huber_delta)
    n_cams = len(problem.cameras)
    g = np.zeros(6 * n_cams + 3 * len(problem.points))
    for m in range(len(problem.pixels)):
        j = int(problem.cam_indices[m])
        k = int(problem.point_indices[m])
        _, J_pose, J_point = _camera_jacobians(problem.cameras[j], problem.points[k])
        g[6 * j : 6 * j + 6] += 2.0 * weights[m] * J_pose.T @ res[m]
        s = 6 * n_cams + 3 * k
        g[s : s + 3] += 2.0 * weights[m] * J_point.T @ res[m]
    if problem.lam > 0:
        for j, cam in enumerate(problem.cameras):
            if cam.gps_prior is None:
                continue
            rg = cam.pose.center - cam.gps_prior
            g[6 * j : 6 * j + 6] += 2.0 * problem.lam * _gps_jacobian(cam).T @ rg
    return float(np.linalg.norm(g))
