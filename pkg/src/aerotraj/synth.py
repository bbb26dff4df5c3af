"""Synthetic scene and recording generator: closed-form terrain, a
quasi-stationary camera rig, scripted object motions, and derived noisy
detections, correspondences and GPS tags.

Everything is generated from a seed, so identical seeds give bitwise
identical outputs.  Object motion is piecewise analytic rather than
simulated, which is what makes exact oracle tests possible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraFrame, FrameStatus, Intrinsics, Pose
from .categories import validate_category
from .geodesy import LocalFrame
from .mesh import TriangleMesh, make_grid_mesh
from .refine import Detection3D
from .rotations import rot_x
from .tracker import Track, TrackState, TrackStatus


class SynthError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Terrain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Terrain:
    """Closed-form height field: flat, inclined (grade along +x) or rolling."""

    kind: str = "flat"
    grade: float = 0.0
    amplitude: float = 0.0
    wavelength: float = 30.0
    extent: float = 80.0
    mesh_step: float = 5.0

    def __post_init__(self):
        if self.kind not in ("flat", "inclined", "rolling"):
            raise SynthError(f"unknown terrain kind {self.kind!r}")
        if self.kind == "inclined" and abs(self.grade) > 0.25:
            raise SynthError("terrain grade limited to 25%")

    def height(self, x, y):
        if self.kind == "flat":
            return np.zeros_like(np.asarray(x, dtype=float))
        if self.kind == "inclined":
            return self.grade * np.asarray(x, dtype=float)
        return self.amplitude * np.sin(2.0 * np.pi * np.asarray(x, dtype=float) / self.wavelength)

    def gradient(self, x, y):
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(x), np.zeros_like(x)
        if self.kind == "inclined":
            return np.full_like(x, self.grade), np.zeros_like(x)
        gx = (
            self.amplitude
            * 2.0
            * np.pi
            / self.wavelength
            * np.cos(2.0 * np.pi * x / self.wavelength)
        )
        return gx, np.zeros_like(x)

    def normal(self, x, y) -> np.ndarray:
        gx, gy = self.gradient(x, y)
        n = np.array([-float(gx), -float(gy), 1.0])
        return n / np.linalg.norm(n)

    def mesh(self) -> TriangleMesh:
        n = max(3, int(round(2 * self.extent / self.mesh_step)) + 1)
        return make_grid_mesh(
            -self.extent,
            self.extent,
            -self.extent,
            self.extent,
            n,
            n,
            lambda x, y: float(self.height(x, y)),
        )


# ---------------------------------------------------------------------------
# Scripted motions (plan view; height always comes from the terrain)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LineMotion:
    x0: float
    y0: float
    heading: float  # radians
    speed: float

    def plan_state(self, t: float):
        c, s = math.cos(self.heading), math.sin(self.heading)
        return (
            self.x0 + self.speed * t * c,
            self.y0 + self.speed * t * s,
            self.speed * c,
            self.speed * s,
            self.heading,
        )


@dataclass(frozen=True)
class ArcMotion:
    cx: float
    cy: float
    radius: float
    angular_speed: float  # rad/s, positive = counter-clockwise
    phase0: float = 0.0

    def plan_state(self, t: float):
        a = self.phase0 + self.angular_speed * t
        x = self.cx + self.radius * math.cos(a)
        y = self.cy + self.radius * math.sin(a)
        vx = -self.radius * self.angular_speed * math.sin(a)
        vy = self.radius * self.angular_speed * math.cos(a)
        heading = math.atan2(vy, vx)
        return x, y, vx, vy, heading


@dataclass(frozen=True)
class PiecewiseMotion:
    """Straight-line motion with signed speeds per segment and fixed facing.

    Negative speeds reverse along the heading while the vehicle keeps
    facing forward; this is how parking scripts are built.
    """

    x0: float
    y0: float
    heading: float
    segments: tuple[tuple[float, float], ...]  # (duration, signed speed)

    def plan_state(self, t: float):
        c, s = math.cos(self.heading), math.sin(self.heading)
        dist = 0.0
        remaining = t
        speed = 0.0
        for duration, seg_speed in self.segments:
            if remaining <= duration:
                dist += seg_speed * max(remaining, 0.0)
                speed = seg_speed
                break
            dist += seg_speed * duration
            remaining -= duration
        else:
            speed = 0.0
        return self.x0 + dist * c, self.y0 + dist * s, speed * c, speed * s, self.heading


def park_motion(x0, y0, heading, forward1, reverse, forward2, speed=2.0) -> PiecewiseMotion:
    """Forward-reverse-forward parking script followed by a standstill."""
    return PiecewiseMotion(
        x0,
        y0,
        heading,
        (
            (forward1 / speed, speed),
            (reverse / speed, -speed),
            (forward2 / speed, speed),
        ),
    )


@dataclass(frozen=True)
class ObjectSpec:
    category: str
    dimensions: tuple[float, float, float]
    motion: object
    t_start: float = 0.0
    t_end: float | None = None

    def __post_init__(self):
        validate_category(self.category)


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraSpec:
    altitude: float = 100.0
    tilt_deg: float = 0.0
    fx: float = 1400.0
    fy: float = 1400.0
    cx: float = 960.0
    cy: float = 540.0
    width: int = 1920
    height: int = 1080

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def pose(self) -> Pose:
        # nadir look with an optional forward tilt about the camera x-axis
        R = rot_x(math.pi - math.radians(self.tilt_deg))
        center = np.array([0.0, 0.0, self.altitude])
        return Pose(R, -R @ center)


@dataclass(frozen=True)
class NoiseSpec:
    detection_sigma: float = 0.0  # camera-frame position noise, meters
    depth_bias: float = 0.0  # additive Z_c bias, meters
    pixel_sigma: float = 0.0  # pixel noise on detections and correspondences
    gps_sigma: float = 0.0  # GPS tag noise, meters
    outlier_fraction: float = 0.0  # fraction of correspondences made uniform


@dataclass(frozen=True)
class SynthScenario:
    terrain: Terrain = field(default_factory=Terrain)
    camera: CameraSpec = field(default_factory=CameraSpec)
    objects: tuple[ObjectSpec, ...] = ()
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    duration: float = 10.0
    rate: float = 25.0
    seed: int = 0
    correspondences_per_frame: int = 120
    structure_points: int = 150
    structure_height: float = 25.0
    local_frame: LocalFrame = field(
        default_factory=lambda: LocalFrame(32, True, 691000.0, 5336000.0, 520.0)
    )

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.rate))


@dataclass
class ObjectTruth:
    object_id: int
    category: str
    dimensions: np.ndarray
    position: np.ndarray
    rotation: np.ndarray  # world frame
    yaw: float
    velocity: np.ndarray


@dataclass
class SynthTruth:
    scenario: SynthScenario
    mesh: TriangleMesh
    frames: dict[int, CameraFrame]
    objects: dict[int, list[ObjectTruth]]  # frame -> visible objects

    def tracks(self) -> list[Track]:
        """Ground-truth trajectories in the tracker's own representation."""
        per_object: dict[int, list[tuple[int, ObjectTruth]]] = {}
        for frame, objs in sorted(self.objects.items()):
            for o in objs:
                per_object.setdefault(o.object_id, []).append((frame, o))
        tracks = []
        for oid in sorted(per_object):
            rows = per_object[oid]
            frames = [f for f, _ in rows]
            states = [
                TrackState(
                    position=o.position,
                    velocity=o.velocity,
                    acceleration=np.zeros(3),
                    yaw=o.yaw,
                    covariance=np.eye(9),
                )
                for _, o in rows
            ]
            yaw = np.array([o.yaw for _, o in rows])
            tracks.append(
                Track(
                    track_id=oid,
                    category=rows[0][1].category,
                    frames=frames,
                    states=states,
                    dimensions=rows[0][1].dimensions,
                    status=TrackStatus.TERMINATED,
                    orientations=np.stack([yaw, np.zeros_like(yaw), np.zeros_like(yaw)], axis=1),
                )
            )
        return tracks


@dataclass
class SynthResult:
    truth: SynthTruth
    detections: list[Detection3D]
    correspondences: dict[int, list]  # frame -> [(u, v, X, Y, Z)]
    gps_tags: dict[int, np.ndarray]
    scene_points: np.ndarray


def _object_rotation(terrain: Terrain, x: float, y: float, heading: float) -> np.ndarray:
    """World box rotation: heading projected onto the terrain tangent plane."""
    n = terrain.normal(x, y)
    h = np.array([math.cos(heading), math.sin(heading), 0.0])
    t = h - np.dot(h, n) * n
    t /= np.linalg.norm(t)
    y_axis = np.cross(n, t)
    return np.stack([t, y_axis, n], axis=1)


def _box_corners(position, R, dims):
    l, w, h = dims
    offsets = np.array(
        [
            [sx * l / 2, sy * w / 2, sz]
            for sx in (-1, 1)
            for sy in (-1, 1)
            for sz in (0.0, h)
        ]
    )
    return position[None, :] + offsets @ R.T


def generate(scenario: SynthScenario) -> SynthResult:
    """Render the scenario into pipeline inputs plus exact ground truth."""
    rng = np.random.default_rng(scenario.seed)
    terrain = scenario.terrain
    mesh = terrain.mesh()
    K = scenario.camera.intrinsics()
    pose = scenario.camera.pose()

    # static structure (facade-like points) gives PnP its depth diversity
    extent = terrain.extent
    structure = rng.uniform(
        [-extent * 0.9, -extent * 0.9, 0.0],
        [extent * 0.9, extent * 0.9, scenario.structure_height],
        size=(scenario.structure_points, 3),
    )
    structure[:, 2] += np.asarray(terrain.height(structure[:, 0], structure[:, 1]))
    scene_points = np.concatenate([mesh.vertices, structure], axis=0)

    frames: dict[int, CameraFrame] = {}
    objects: dict[int, list[ObjectTruth]] = {}
    detections: list[Detection3D] = []
    correspondences: dict[int, list] = {}
    gps_tags: dict[int, np.ndarray] = {}

    n_frames = scenario.n_frames
    for frame in range(n_frames):
        t = frame / scenario.rate
        frames[frame] = CameraFrame(
            frame_index=frame,
            timestamp=t,
            intrinsics=K,
            pose=pose,
            gps_prior=None,
            inlier_count=0,
            rms_reprojection=0.0,
            status=FrameStatus.LOCALIZED,
        )
        gps_tags[frame] = pose.center + rng.normal(0.0, scenario.noise.gps_sigma, 3)

        visible: list[ObjectTruth] = []
        for oid, spec in enumerate(scenario.objects):
            if t < spec.t_start or (spec.t_end is not None and t > spec.t_end):
                continue
            x, y, vx, vy, heading = spec.motion.plan_state(t - spec.t_start)
            if abs(x) > extent or abs(y) > extent:
                continue
            z = float(terrain.height(x, y))
            gx, gy = terrain.gradient(x, y)
            vz = float(gx) * vx + float(gy) * vy
            position = np.array([x, y, z])
            R_w = _object_rotation(terrain, x, y, heading)
            truth_obj = ObjectTruth(
                object_id=oid,
                category=spec.category,
                dimensions=np.asarray(spec.dimensions, dtype=float),
                position=position,
                rotation=R_w,
                yaw=heading,
                velocity=np.array([vx, vy, vz]),
            )

            # render the detection through the true camera
            Xc = pose.world_to_camera(position)
            if Xc[2] <= 1.0:
                continue
            Xc_noisy = Xc + rng.normal(0.0, scenario.noise.detection_sigma, 3)
            u = K.fx * Xc_noisy[0] / Xc_noisy[2] + K.cx
            v = K.fy * Xc_noisy[1] / Xc_noisy[2] + K.cy
            u += rng.normal(0.0, scenario.noise.pixel_sigma)
            v += rng.normal(0.0, scenario.noise.pixel_sigma)
            if not K.contains(u, v):
                continue
            depth = Xc_noisy[2] + scenario.noise.depth_bias
            if depth <= 0.1:
                continue
            corners = _box_corners(position, R_w, spec.dimensions)
            corners_cam = corners @ pose.rotation.T + pose.translation
            cu = K.fx * corners_cam[:, 0] / corners_cam[:, 2] + K.cx
            cv = K.fy * corners_cam[:, 1] / corners_cam[:, 2] + K.cy
            bbox = np.array([cu.min(), cv.min(), cu.max(), cv.max()])
            detections.append(
                Detection3D(
                    frame_index=frame,
                    category=spec.category,
                    score=1.0,
                    bbox2d=bbox,
                    dimensions=np.asarray(spec.dimensions, dtype=float),
                    orientation_cam=pose.rotation @ R_w,
                    depth=float(depth),
                    ground_center_px=np.array([u, v]),
                )
            )
            visible.append(truth_obj)
        objects[frame] = visible

        # correspondences from the static scene
        n_corr = scenario.correspondences_per_frame
        idx = rng.choice(len(scene_points), size=min(n_corr, len(scene_points)), replace=False)
        rows = []
        for k in idx:
            X = scene_points[k]
            Xc = pose.world_to_camera(X)
            if Xc[2] <= 1.0:
                continue
            u = K.fx * Xc[0] / Xc[2] + K.cx + rng.normal(0.0, scenario.noise.pixel_sigma)
            v = K.fy * Xc[1] / Xc[2] + K.cy + rng.normal(0.0, scenario.noise.pixel_sigma)
            if scenario.noise.outlier_fraction > 0 and rng.random() < scenario.noise.outlier_fraction:
                u = rng.uniform(0, K.width)
                v = rng.uniform(0, K.height)
            if K.contains(u, v):
                rows.append((float(u), float(v), float(X[0]), float(X[1]), float(X[2])))
        correspondences[frame] = rows

    truth = SynthTruth(scenario=scenario, mesh=mesh, frames=frames, objects=objects)
    return SynthResult(
        truth=truth,
        detections=detections,
        correspondences=correspondences,
        gps_tags=gps_tags,
        scene_points=scene_points,
    )


# ---------------------------------------------------------------------------
# Mapping-pass bundle adjustment problem
# ---------------------------------------------------------------------------


def make_ba_problem(
    scenario: SynthScenario,
    n_cameras: int = 10,
    n_points: int = 60,
    pixel_noise: float = 0.0,
    gps_noise: float = 0.0,
    pose_perturbation: float = 0.0,
    point_perturbation: float = 0.0,
    lam: float = 1.0,
    seed: int | None = None,
):
    """(initial problem, ground-truth problem) for the mapping-pass BA.

    Cameras fly a ring above the scene; GPS priors are true centers plus
    noise; initial poses and points can be perturbed away from the optimum.
    """
    from .ba import BACamera, BAProblem
    from .camera import project_many
    from .rotations import so3_exp

    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    terrain = scenario.terrain
    K = scenario.camera.intrinsics()
    extent = terrain.extent

    pts = rng.uniform(
        [-extent * 0.6, -extent * 0.6, 0.0],
        [extent * 0.6, extent * 0.6, scenario.structure_height * 0.5],
        size=(n_points, 3),
    )
    pts[:, 2] += np.asarray(terrain.height(pts[:, 0], pts[:, 1]))

    cams = []
    for i in range(n_cameras):
        ang = 2.0 * np.pi * i / n_cameras
        center = np.array(
            [
                0.4 * extent * np.cos(ang),
                0.4 * extent * np.sin(ang),
                scenario.camera.altitude + 5.0 * np.sin(3.0 * ang),
            ]
        )
        R = rot_x(math.pi) @ so3_exp(rng.normal(0.0, 0.03, 3))
        pose = Pose(R, -R @ center)
        gps = center + rng.normal(0.0, gps_noise, 3)
        cams.append(BACamera(K, pose, gps))

    cam_idx, pt_idx, pixels = [], [], []
    for j, cam in enumerate(cams):
        uv, z = project_many(K, cam.pose, pts)
        for k in range(n_points):
            if z[k] > 1.0 and K.contains(uv[k, 0], uv[k, 1]):
                cam_idx.append(j)
                pt_idx.append(k)
                pixels.append(uv[k] + rng.normal(0.0, pixel_noise, 2))
    truth = BAProblem(
        cameras=cams,
        points=pts,
        cam_indices=np.array(cam_idx),
        point_indices=np.array(pt_idx),
        pixels=np.array(pixels).reshape(-1, 2),
        lam=lam,
    )
    truth.validate()

    initial = truth.copy()
    if pose_perturbation > 0:
        for cam in initial.cameras:
            dtheta = rng.normal(0.0, pose_perturbation * 0.035, 3)
            dt = rng.normal(0.0, pose_perturbation, 3)
            cam.pose = Pose(so3_exp(dtheta) @ cam.pose.rotation, cam.pose.translation + dt)
    if point_perturbation > 0:
        initial.points = initial.points + rng.normal(0.0, point_perturbation, initial.points.shape)
    return initial, truth


# ---------------------------------------------------------------------------
# Evaluation against ground truth
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    median_position_error: float
    median_yaw_error: float
    mota: float
    id_switches: int
    matched: int
    misses: int
    false_positives: int
    gt_total: int
    position_errors: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def as_dict(self) -> dict:
        return {
            "median_position_error": self.median_position_error,
            "median_yaw_error": self.median_yaw_error,
            "mota": self.mota,
            "id_switches": self.id_switches,
            "matched": self.matched,
            "misses": self.misses,
            "false_positives": self.false_positives,
            "gt_total": self.gt_total,
        }


def truth_from_tracks(truth_tracks: list[Track]) -> SynthTruth:
    """Rebuild the frame-indexed truth table from ground-truth trajectories,
    e.g. after a round trip through the trajectory file format."""
    objects: dict[int, list[ObjectTruth]] = {}
    for tr in truth_tracks:
        orient = tr.orientations
        for k, (f, s) in enumerate(zip(tr.frames, tr.states)):
            yaw = float(orient[k, 0]) if orient is not None else s.yaw
            objects.setdefault(f, []).append(
                ObjectTruth(
                    object_id=tr.track_id,
                    category=tr.category,
                    dimensions=tr.dimensions,
                    position=s.position,
                    rotation=np.eye(3),
                    yaw=yaw,
                    velocity=s.velocity,
                )
            )
    return SynthTruth(scenario=None, mesh=None, frames={}, objects=objects)


def _wrap_angle(a: float) -> float:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def evaluate(tracks: list[Track], truth: SynthTruth, gate: float = 2.0) -> EvalReport:
    """Per-frame greedy center-distance matching within a gate, then error
    aggregation plus MOTA-style accounting."""
    track_states: dict[int, dict[int, TrackState]] = {}
    for tr in tracks:
        for f, s in zip(tr.frames, tr.states):
            track_states.setdefault(f, {})[tr.track_id] = s

    frames_in_common = sorted(truth.objects.keys())
    if not frames_in_common:
        raise SynthError("truth has no frames to evaluate")

    pos_errors = []
    yaw_errors = []
    misses = 0
    false_positives = 0
    id_switches = 0
    matched = 0
    gt_total = 0
    last_match: dict[int, int] = {}

    for f in frames_in_common:
        gt = truth.objects.get(f, [])
        out = track_states.get(f, {})
        gt_total += len(gt)
        pairs = []
        for gi, o in enumerate(gt):
            for tid, s in out.items():
                d = float(np.linalg.norm(o.position - s.position))
                if d <= gate:
                    pairs.append((d, gi, tid))
        pairs.sort(key=lambda p: (p[0], p[1], p[2]))
        used_gt: set[int] = set()
        used_tr: set[int] = set()
        for d, gi, tid in pairs:
            if gi in used_gt or tid in used_tr:
                continue
            used_gt.add(gi)
            used_tr.add(tid)
            o = gt[gi]
            s = out[tid]
            pos_errors.append(d)
            yaw_errors.append(abs(_wrap_angle(o.yaw - s.yaw)))
            matched += 1
            prev = last_match.get(o.object_id)
            if prev is not None and prev != tid:
                id_switches += 1
            last_match[o.object_id] = tid
        misses += len(gt) - len(used_gt)
        false_positives += len(out) - len(used_tr)

    mota = 1.0 - (misses + false_positives + id_switches) / max(gt_total, 1)
    pos_errors = np.array(pos_errors)
    return EvalReport(
        median_position_error=float(np.median(pos_errors)) if len(pos_errors) else float("inf"),
        median_yaw_error=float(np.median(yaw_errors)) if yaw_errors else float("inf"),
        mota=mota,
        id_switches=id_switches,
        matched=matched,
        misses=misses,
        false_positives=false_positives,
        gt_total=gt_total,
        position_errors=pos_errors,
    )
