"""Columnar text file schemas for every pipeline artifact.

All files are UTF-8 text with a comment-prefixed header block followed by
whitespace-separated data rows, so fixtures stay diff-able and language
neutral.  Writers are deterministic: no timestamps or environment data ever
enter a payload.  Declared numeric precision: 6 decimals for meters and
derived SI quantities, 9 for radians, 12 for unitless rotation/knot entries.

Every geo-referenced output carries the scene LocalFrame (zone, hemisphere,
origin) in its header.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ba import BACamera, BAProblem
from .camera import CameraFrame, Correspondence, FrameStatus, Intrinsics, Pose
from .categories import CLASS_NAMES, PARENT_CLASS, validate_category
from .geodesy import LocalFrame
from .ground import GroundSurface
from .refine import Detection3D, RefinedDetection, RefinementFlag
from .tracker import Track, TrackState, TrackStatus

FORMAT_VERSION = 1


class FormatError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


def _num(value: float, decimals: int) -> str:
    if not math.isfinite(value):
        return "nan"
    s = f"{value:.{decimals}f}"
    if s.startswith("-") and float(s) == 0.0:
        s = s[1:]
    return s


def _m(v) -> str:
    return _num(float(v), 6)


def _rad(v) -> str:
    return _num(float(v), 9)


def _u(v) -> str:
    return _num(float(v), 12)


# ---------------------------------------------------------------------------
# Header block
# ---------------------------------------------------------------------------


def _write_header(fh, fmt: str, frame: LocalFrame | None = None, rate: float | None = None,
                  recording: str | None = None, columns: str | None = None,
                  extra: dict | None = None) -> None:
    fh.write(f"# format: {fmt} v{FORMAT_VERSION}\n")
    if recording is not None:
        fh.write(f"# recording: {recording}\n")
    if rate is not None:
        fh.write(f"# rate_hz: {_num(rate, 6)}\n")
    if frame is not None:
        fh.write(f"# utm_zone: {frame.zone}\n")
        fh.write(f"# hemisphere: {frame.hemisphere}\n")
        fh.write(f"# origin_easting: {_m(frame.origin_easting)}\n")
        fh.write(f"# origin_northing: {_m(frame.origin_northing)}\n")
        fh.write(f"# origin_altitude: {_m(frame.origin_altitude)}\n")
    for key, value in (extra or {}).items():
        fh.write(f"# {key}: {value}\n")
    if columns is not None:
        fh.write(f"# columns: {columns}\n")


def _read_lines(path):
    meta: dict[str, str] = {}
    rows: list[tuple[int, list[str]]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                body = stripped[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    meta[key.strip()] = value.strip()
                continue
            rows.append((line_no, stripped.split()))
    return meta, rows


def _check_format(meta: dict, expected: str, path) -> None:
    fmt = meta.get("format", "")
    parts = fmt.split()
    if not parts or parts[0] != expected:
        raise FormatError(f"expected format {expected!r}, found {fmt!r}", path)
    version = parts[1] if len(parts) > 1 else ""
    if version != f"v{FORMAT_VERSION}":
        raise FormatError(f"unknown {expected} version {version!r}", path)


def read_local_frame(meta: dict, path) -> LocalFrame | None:
    if "utm_zone" not in meta:
        return None
    try:
        return LocalFrame(
            zone=int(meta["utm_zone"]),
            north=meta.get("hemisphere", "N") == "N",
            origin_easting=float(meta["origin_easting"]),
            origin_northing=float(meta["origin_northing"]),
            origin_altitude=float(meta["origin_altitude"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed LocalFrame header: {exc}", path)


def _floats(parts, start, count, path, line_no):
    try:
        return [float(p) for p in parts[start : start + count]]
    except ValueError as exc:
        raise FormatError(f"malformed numeric field: {exc}", path, line_no)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

TRAJECTORY_COLUMNS = (
    "frame_id track_id category x y z vx vy vz ax ay az yaw pitch roll length width height"
)


@dataclass
class TrajectoryRecord:
    frame_id: int
    track_id: int
    category: str
    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float
    ax: float
    ay: float
    az: float
    yaw: float
    pitch: float
    roll: float
    length: float
    width: float
    height: float

    def __post_init__(self):
        validate_category(self.category)


def tracks_to_records(tracks: list[Track]) -> list[TrajectoryRecord]:
    records = []
    for tr in tracks:
        orient = tr.orientations if tr.orientations is not None else np.zeros((len(tr.states), 3))
        for k, (f, s) in enumerate(zip(tr.frames, tr.states)):
            records.append(
                TrajectoryRecord(
                    frame_id=f,
                    track_id=tr.track_id,
                    category=tr.category,
                    x=s.position[0], y=s.position[1], z=s.position[2],
                    vx=s.velocity[0], vy=s.velocity[1], vz=s.velocity[2],
                    ax=s.acceleration[0], ay=s.acceleration[1], az=s.acceleration[2],
                    yaw=orient[k, 0], pitch=orient[k, 1], roll=orient[k, 2],
                    length=tr.dimensions[0], width=tr.dimensions[1], height=tr.dimensions[2],
                )
            )
    records.sort(key=lambda r: (r.frame_id, r.track_id))
    return records


def records_to_tracks(records: list[TrajectoryRecord]) -> list[Track]:
    by_track: dict[int, list[TrajectoryRecord]] = {}
    for r in records:
        by_track.setdefault(r.track_id, []).append(r)
    tracks = []
    for tid in sorted(by_track):
        rows = sorted(by_track[tid], key=lambda r: r.frame_id)
        states = [
            TrackState(
                position=np.array([r.x, r.y, r.z]),
                velocity=np.array([r.vx, r.vy, r.vz]),
                acceleration=np.array([r.ax, r.ay, r.az]),
                yaw=r.yaw,
                covariance=np.eye(9),
            )
            for r in rows
        ]
        orient = np.array([[r.yaw, r.pitch, r.roll] for r in rows])
        tracks.append(
            Track(
                track_id=tid,
                category=rows[0].category,
                frames=[r.frame_id for r in rows],
                states=states,
                dimensions=np.array([rows[0].length, rows[0].width, rows[0].height]),
                status=TrackStatus.TERMINATED,
                orientations=orient,
            )
        )
    return tracks


def write_trajectories(path, records: list[TrajectoryRecord], frame: LocalFrame,
                       rate: float, recording: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(
            fh, "trajectories", frame=frame, rate=rate, recording=recording,
            columns=TRAJECTORY_COLUMNS,
            extra={"angle_order": "yaw pitch roll (Z-Y-X intrinsic composition)"},
        )
        for r in records:
            fh.write(
                f"{r.frame_id} {r.track_id} {r.category} "
                f"{_m(r.x)} {_m(r.y)} {_m(r.z)} "
                f"{_m(r.vx)} {_m(r.vy)} {_m(r.vz)} "
                f"{_m(r.ax)} {_m(r.ay)} {_m(r.az)} "
                f"{_rad(r.yaw)} {_rad(r.pitch)} {_rad(r.roll)} "
                f"{_m(r.length)} {_m(r.width)} {_m(r.height)}\n"
            )


def read_trajectories(path):
    meta, rows = _read_lines(path)
    _check_format(meta, "trajectories", path)
    records = []
    for line_no, parts in rows:
        if len(parts) != 18:
            raise FormatError(f"expected 18 fields, found {len(parts)}", path, line_no)
        category = parts[2]
        if category not in CLASS_NAMES:
            raise FormatError(f"unknown object category {category!r}", path, line_no)
        vals = _floats(parts, 3, 15, path, line_no)
        try:
            records.append(
                TrajectoryRecord(int(parts[0]), int(parts[1]), category, *vals)
            )
        except ValueError as exc:
            raise FormatError(str(exc), path, line_no)
    return records, meta


# ---------------------------------------------------------------------------
# Detections
# ---------------------------------------------------------------------------

DETECTION_COLUMNS = (
    "frame_index category score u_min v_min u_max v_max length width height "
    "r00 r01 r02 r10 r11 r12 r20 r21 r22 depth u v"
)


def write_detections(path, detections: list[Detection3D], frame: LocalFrame,
                     rate: float, recording: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "detections", frame=frame, rate=rate, recording=recording,
                      columns=DETECTION_COLUMNS)
        for d in detections:
            R = d.orientation_cam.ravel()
            fh.write(
                f"{d.frame_index} {d.category} {_m(d.score)} "
                + " ".join(_m(v) for v in d.bbox2d) + " "
                + " ".join(_m(v) for v in d.dimensions) + " "
                + " ".join(_u(v) for v in R) + " "
                + f"{_m(d.depth)} {_m(d.ground_center_px[0])} {_m(d.ground_center_px[1])}\n"
            )


def read_detections(path) -> list[Detection3D]:
    meta, rows = _read_lines(path)
    _check_format(meta, "detections", path)
    out = []
    for line_no, parts in rows:
        if len(parts) != 22:
            raise FormatError(f"expected 22 fields, found {len(parts)}", path, line_no)
        category = parts[1]
        if category not in CLASS_NAMES:
            raise FormatError(f"unknown object category {category!r}", path, line_no)
        vals = _floats(parts, 2, 20, path, line_no)
        try:
            out.append(
                Detection3D(
                    frame_index=int(parts[0]),
                    category=category,
                    score=vals[0],
                    bbox2d=np.array(vals[1:5]),
                    dimensions=np.array(vals[5:8]),
                    orientation_cam=np.array(vals[8:17]).reshape(3, 3),
                    depth=vals[17],
                    ground_center_px=np.array(vals[18:20]),
                )
            )
        except ValueError as exc:
            raise FormatError(str(exc), path, line_no)
    return out


# ---------------------------------------------------------------------------
# Refined detections
# ---------------------------------------------------------------------------

REFINED_COLUMNS = (
    "frame_index category score x y z r00 r01 r02 r10 r11 r12 r20 r21 r22 "
    "length width height flag"
)


def write_refined(path, refined: list[RefinedDetection], frame: LocalFrame,
                  rate: float, recording: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "refined_detections", frame=frame, rate=rate,
                      recording=recording, columns=REFINED_COLUMNS)
        for d in refined:
            fh.write(
                f"{d.frame_index} {d.category} {_m(d.score)} "
                + " ".join(_m(v) for v in d.position_world) + " "
                + " ".join(_u(v) for v in d.orientation_world.ravel()) + " "
                + " ".join(_m(v) for v in d.dimensions) + f" {d.flag.value}\n"
            )


def read_refined(path) -> list[RefinedDetection]:
    meta, rows = _read_lines(path)
    _check_format(meta, "refined_detections", path)
    out = []
    for line_no, parts in rows:
        if len(parts) != 19:
            raise FormatError(f"expected 19 fields, found {len(parts)}", path, line_no)
        category = parts[1]
        if category not in CLASS_NAMES:
            raise FormatError(f"unknown object category {category!r}", path, line_no)
        vals = _floats(parts, 2, 16, path, line_no)
        try:
            flag = RefinementFlag(parts[18])
        except ValueError:
            raise FormatError(f"unknown refinement flag {parts[18]!r}", path, line_no)
        out.append(
            RefinedDetection(
                frame_index=int(parts[0]),
                category=category,
                score=vals[0],
                position_world=np.array(vals[1:4]),
                orientation_world=np.array(vals[4:13]).reshape(3, 3),
                dimensions=np.array(vals[13:16]),
                flag=flag,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Correspondences
# ---------------------------------------------------------------------------

CORRESPONDENCE_COLUMNS = "frame_index u v x y z"


def write_correspondences(path, per_frame: dict[int, list], frame: LocalFrame,
                          rate: float, recording: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "correspondences", frame=frame, rate=rate,
                      recording=recording, columns=CORRESPONDENCE_COLUMNS)
        for f in sorted(per_frame):
            for row in per_frame[f]:
                u, v, x, y, z = row
                fh.write(f"{f} {_m(u)} {_m(v)} {_m(x)} {_m(y)} {_m(z)}\n")


def read_correspondences(path) -> dict[int, list[Correspondence]]:
    meta, rows = _read_lines(path)
    _check_format(meta, "correspondences", path)
    out: dict[int, list[Correspondence]] = {}
    for line_no, parts in rows:
        if len(parts) != 6:
            raise FormatError(f"expected 6 fields, found {len(parts)}", path, line_no)
        vals = _floats(parts, 1, 5, path, line_no)
        out.setdefault(int(parts[0]), []).append(
            Correspondence(pixel=np.array(vals[0:2]), point=np.array(vals[2:5]))
        )
    return out


# ---------------------------------------------------------------------------
# Camera poses
# ---------------------------------------------------------------------------

POSE_COLUMNS = (
    "frame_index timestamp fx fy cx cy width height "
    "r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz status inlier_count rms"
)


def write_poses(path, frames: list[CameraFrame], frame: LocalFrame,
                rate: float, recording: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "camera_poses", frame=frame, rate=rate,
                      recording=recording, columns=POSE_COLUMNS)
        for f in frames:
            K = f.intrinsics
            pose = f.pose if f.pose is not None else Pose.identity()
            fh.write(
                f"{f.frame_index} {_m(f.timestamp)} "
                f"{_m(K.fx)} {_m(K.fy)} {_m(K.cx)} {_m(K.cy)} {K.width} {K.height} "
                + " ".join(_u(v) for v in pose.rotation.ravel()) + " "
                + " ".join(_m(v) for v in pose.translation)
                + f" {f.status.value} {f.inlier_count} {_m(f.rms_reprojection)}\n"
            )


def read_poses(path) -> list[CameraFrame]:
    meta, rows = _read_lines(path)
    _check_format(meta, "camera_poses", path)
    out = []
    for line_no, parts in rows:
        if len(parts) != 23:
            raise FormatError(f"expected 23 fields, found {len(parts)}", path, line_no)
        vals = _floats(parts, 1, 5, path, line_no)
        width, height = int(parts[6]), int(parts[7])
        mat_vals = _floats(parts, 8, 12, path, line_no)
        try:
            status = FrameStatus(parts[20])
        except ValueError:
            raise FormatError(f"unknown frame status {parts[20]!r}", path, line_no)
        K = Intrinsics(vals[1], vals[2], vals[3], vals[4], width, height)
        pose = None
        if status != FrameStatus.UNLOCALIZED:
            try:
                pose = Pose(np.array(mat_vals[0:9]).reshape(3, 3), np.array(mat_vals[9:12]))
            except ValueError as exc:
                raise FormatError(str(exc), path, line_no)
        out.append(
            CameraFrame(
                frame_index=int(parts[0]),
                timestamp=vals[0],
                intrinsics=K,
                pose=pose,
                inlier_count=int(parts[21]),
                rms_reprojection=float(parts[22]),
                status=status,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Ground surface
# ---------------------------------------------------------------------------


def write_ground_surface(path, surface: GroundSurface, frame: LocalFrame,
                         recording: str) -> None:
    nu, nv = surface.ctrl_z.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(
            fh, "ground_surface", frame=frame, recording=recording,
            extra={
                "degree_u": surface.degree_u,
                "degree_v": surface.degree_v,
                "n_ctrl_u": nu,
                "n_ctrl_v": nv,
                "domain": f"{_m(surface.x0)} {_m(surface.x1)} {_m(surface.y0)} {_m(surface.y1)}",
            },
        )
        fh.write("knots_u " + " ".join(_u(v) for v in surface.knots_u) + "\n")
        fh.write("knots_v " + " ".join(_u(v) for v in surface.knots_v) + "\n")
        for i in range(nu):
            for j in range(nv):
                fh.write(
                    f"ctrl {i} {j} {_m(surface.ctrl_x[i, j])} {_m(surface.ctrl_y[i, j])} "
                    f"{_m(surface.ctrl_z[i, j])} {_u(surface.weights[i, j])}\n"
                )


def read_ground_surface(path) -> GroundSurface:
    meta, rows = _read_lines(path)
    _check_format(meta, "ground_surface", path)
    try:
        degree_u = int(meta["degree_u"])
        degree_v = int(meta["degree_v"])
        nu = int(meta["n_ctrl_u"])
        nv = int(meta["n_ctrl_v"])
        x0, x1, y0, y1 = (float(v) for v in meta["domain"].split())
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed ground_surface header: {exc}", path)
    knots_u = knots_v = None
    ctrl_x = np.zeros((nu, nv))
    ctrl_y = np.zeros((nu, nv))
    ctrl_z = np.zeros((nu, nv))
    weights = np.ones((nu, nv))
    seen = np.zeros((nu, nv), dtype=bool)
    for line_no, parts in rows:
        if parts[0] == "knots_u":
            knots_u = np.array(_floats(parts, 1, len(parts) - 1, path, line_no))
        elif parts[0] == "knots_v":
            knots_v = np.array(_floats(parts, 1, len(parts) - 1, path, line_no))
        elif parts[0] == "ctrl":
            if len(parts) != 7:
                raise FormatError("malformed ctrl row", path, line_no)
            i, j = int(parts[1]), int(parts[2])
            if not (0 <= i < nu and 0 <= j < nv):
                raise FormatError(f"control index ({i},{j}) out of range", path, line_no)
            vals = _floats(parts, 3, 4, path, line_no)
            ctrl_x[i, j], ctrl_y[i, j], ctrl_z[i, j], weights[i, j] = vals
            seen[i, j] = True
        else:
            raise FormatError(f"unknown record type {parts[0]!r}", path, line_no)
    if knots_u is None or knots_v is None or not seen.all():
        raise FormatError("incomplete ground_surface file", path)
    return GroundSurface(
        degree_u=degree_u, degree_v=degree_v, knots_u=knots_u, knots_v=knots_v,
        ctrl_x=ctrl_x, ctrl_y=ctrl_y, ctrl_z=ctrl_z, weights=weights,
        x0=x0, x1=x1, y0=y0, y1=y1,
    )


# ---------------------------------------------------------------------------
# Bundle adjustment problems
# ---------------------------------------------------------------------------


def write_ba_problem(path, problem: BAProblem, frame: LocalFrame, recording: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "ba_problem", frame=frame, recording=recording,
                      extra={"lambda": _u(problem.lam)})
        for j, cam in enumerate(problem.cameras):
            K = cam.intrinsics
            gps = cam.gps_prior if cam.gps_prior is not None else np.zeros(3)
            fh.write(
                f"camera {j} {_m(K.fx)} {_m(K.fy)} {_m(K.cx)} {_m(K.cy)} {K.width} {K.height} "
                + " ".join(_u(v) for v in cam.pose.rotation.ravel()) + " "
                + " ".join(_m(v) for v in cam.pose.translation) + " "
                + " ".join(_m(v) for v in gps)
                + f" {1 if cam.gps_prior is not None else 0}\n"
            )
        for k, p in enumerate(problem.points):
            fh.write(f"point {k} {_m(p[0])} {_m(p[1])} {_m(p[2])}\n")
        for m in range(len(problem.pixels)):
            fh.write(
                f"obs {problem.cam_indices[m]} {problem.point_indices[m]} "
                f"{_m(problem.pixels[m, 0])} {_m(problem.pixels[m, 1])}\n"
            )


def read_ba_problem(path) -> BAProblem:
    meta, rows = _read_lines(path)
    _check_format(meta, "ba_problem", path)
    lam = float(meta.get("lambda", "1"))
    cameras: list[tuple[int, BACamera]] = []
    points: list[tuple[int, list[float]]] = []
    obs: list[tuple[int, int, float, float]] = []
    for line_no, parts in rows:
        kind = parts[0]
        if kind == "camera":
            if len(parts) != 24:
                raise FormatError("malformed camera row", path, line_no)
            j = int(parts[1])
            vals = _floats(parts, 2, 4, path, line_no)
            width, height = int(parts[6]), int(parts[7])
            mat = _floats(parts, 8, 15, path, line_no)
            has_gps = parts[23] == "1"
            K = Intrinsics(vals[0], vals[1], vals[2], vals[3], width, height)
            try:
                pose = Pose(np.array(mat[0:9]).reshape(3, 3), np.array(mat[9:12]))
            except ValueError as exc:
                raise FormatError(str(exc), path, line_no)
            gps = np.array(mat[12:15]) if has_gps else None
            cameras.append((j, BACamera(K, pose, gps)))
        elif kind == "point":
            points.append((int(parts[1]), _floats(parts, 2, 3, path, line_no)))
        elif kind == "obs":
            vals = _floats(parts, 3, 2, path, line_no)
            obs.append((int(parts[1]), int(parts[2]), vals[0], vals[1]))
        else:
            raise FormatError(f"unknown record type {kind!r}", path, line_no)
    cameras.sort(key=lambda c: c[0])
    points.sort(key=lambda p: p[0])
    problem = BAProblem(
        cameras=[c for _, c in cameras],
        points=np.array([p for _, p in points]).reshape(-1, 3),
        cam_indices=np.array([o[0] for o in obs], dtype=np.int64),
        point_indices=np.array([o[1] for o in obs], dtype=np.int64),
        pixels=np.array([[o[2], o[3]] for o in obs]).reshape(-1, 2),
        lam=lam,
    )
    problem.validate()
    return problem


# ---------------------------------------------------------------------------
# Scenario events, histograms, class stats, polygons, GPS tags
# ---------------------------------------------------------------------------

EVENT_COLUMNS = "kind track_a track_b t_event value switches x y z"


def write_events(path, events, frame: LocalFrame, rate: float, recording: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "events", frame=frame, rate=rate, recording=recording,
                      columns=EVENT_COLUMNS)
        for e in events:
            track_b = e.track_ids[1] if len(e.track_ids) > 1 else -1
            fh.write(
                f"{e.kind.value} {e.track_ids[0]} {track_b} {_m(e.t_event)} {_m(e.value)} "
                f"{e.direction_switches} " + " ".join(_m(v) for v in e.location) + "\n"
            )


def read_events(path):
    from .analytics import EventKind, ScenarioEvent

    meta, rows = _read_lines(path)
    _check_format(meta, "events", path)
    out = []
    for line_no, parts in rows:
        if len(parts) != 9:
            raise FormatError(f"expected 9 fields, found {len(parts)}", path, line_no)
        try:
            kind = EventKind(parts[0])
        except ValueError:
            raise FormatError(f"unknown event kind {parts[0]!r}", path, line_no)
        vals = _floats(parts, 3, 2, path, line_no)
        loc = _floats(parts, 6, 3, path, line_no)
        track_a, track_b = int(parts[1]), int(parts[2])
        ids = (track_a,) if track_b < 0 else (track_a, track_b)
        out.append(
            ScenarioEvent(
                kind=kind, track_ids=ids, t_event=vals[0], value=vals[1],
                location=np.array(loc), direction_switches=int(parts[5]),
            )
        )
    return out


def write_histogram(path, hist, title: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "histogram", extra={"title": title}, columns="bin_left bin_right count")
        for left, right, count in zip(hist.bin_left, hist.bin_right, hist.counts):
            fh.write(f"{_m(left)} {_m(right)} {int(count)}\n")


def read_histogram(path):
    from .analytics import Histogram

    meta, rows = _read_lines(path)
    _check_format(meta, "histogram", path)
    left, right, counts = [], [], []
    for line_no, parts in rows:
        vals = _floats(parts, 0, 2, path, line_no)
        left.append(vals[0])
        right.append(vals[1])
        counts.append(int(parts[2]))
    return Histogram(np.array(left), np.array(right), np.array(counts, dtype=np.int64))


STATS_COLUMNS = "category trajectory_count mean_duration mean_distance mean_speed"


def write_class_stats(path, stats, recording: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "class_stats", recording=recording, columns=STATS_COLUMNS)
        for s in stats:
            fh.write(
                f"{s.category} {s.trajectory_count} {_m(s.mean_duration)} "
                f"{_m(s.mean_distance)} {_m(s.mean_speed)}\n"
            )


def read_class_stats(path):
    from .analytics import ClassStats

    meta, rows = _read_lines(path)
    _check_format(meta, "class_stats", path)
    out = []
    for line_no, parts in rows:
        if len(parts) != 5:
            raise FormatError(f"expected 5 fields, found {len(parts)}", path, line_no)
        vals = _floats(parts, 2, 3, path, line_no)
        out.append(ClassStats(parts[0], int(parts[1]), vals[0], vals[1], vals[2]))
    return out


def write_polygon(path, polygon: np.ndarray, name: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "polygon", extra={"name": name}, columns="x y")
        for p in polygon:
            fh.write(f"{_m(p[0])} {_m(p[1])}\n")


def read_polygon(path) -> np.ndarray:
    meta, rows = _read_lines(path)
    _check_format(meta, "polygon", path)
    pts = [(_floats(parts, 0, 2, path, line_no)) for line_no, parts in rows]
    if len(pts) < 3:
        raise FormatError("polygon needs at least 3 vertices", path)
    return np.array(pts)


def write_gps_tags(path, tags: dict[int, np.ndarray], frame: LocalFrame,
                   rate: float, recording: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "gps_tags", frame=frame, rate=rate, recording=recording,
                      columns="frame_index x y z")
        for f in sorted(tags):
            p = tags[f]
            fh.write(f"{f} {_m(p[0])} {_m(p[1])} {_m(p[2])}\n")


def read_gps_tags(path) -> dict[int, np.ndarray]:
    meta, rows = _read_lines(path)
    _check_format(meta, "gps_tags", path)
    out = {}
    for line_no, parts in rows:
        vals = _floats(parts, 1, 3, path, line_no)
        out[int(parts[0])] = np.array(vals)
    return out


# ---------------------------------------------------------------------------
# Track index (per-trajectory category listing) and summaries
# ---------------------------------------------------------------------------


def write_track_index(path, entries: list[tuple[int, str]], recording: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "track_index", recording=recording, columns="track_id category")
        for tid, category in entries:
            fh.write(f"{tid} {category}\n")


def read_track_index(path) -> list[tuple[int, str]]:
    meta, rows = _read_lines(path)
    _check_format(meta, "track_index", path)
    out = []
    for line_no, parts in rows:
        if len(parts) != 2:
            raise FormatError(f"expected 2 fields, found {len(parts)}", path, line_no)
        if parts[1] not in CLASS_NAMES:
            raise FormatError(f"unknown object category {parts[1]!r}", path, line_no)
        out.append((int(parts[0]), parts[1]))
    return out


def count_by_parent_class(entries: list[tuple[int, str]]) -> Counter:
    """Trajectory counts folded onto the nine coarse classes."""
    return Counter(PARENT_CLASS[c] for _, c in entries)


def write_summary(path, data: dict) -> None:
    """Deterministic key = value summary (stage reports, metrics)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "summary")
        for key in data:
            value = data[key]
            if isinstance(value, float):
                value = _num(value, 9)
            fh.write(f"{key} = {value}\n")


def read_summary(path) -> dict[str, str]:
    meta, rows = _read_lines(path)
    _check_format(meta, "summary", path)
    out: dict[str, str] = {}
    for line_no, parts in rows:
        if "=" not in parts:
            raise FormatError("expected 'key = value'", path, line_no)
        eq = parts.index("=")
        out[" ".join(parts[:eq])] = " ".join(parts[eq + 1 :])
    return out


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Dataset validation
# ---------------------------------------------------------------------------


@dataclass
class Finding:
    file: str
    line: int | None
    code: str
    message: str


@dataclass
class ValidationConfig:
    speed_max: float = 70.0
    accel_max: float = 15.0
    rate: float = 25.0


@dataclass
class DatasetReport:
    findings: list[Finding] = field(default_factory=list)
    files_checked: int = 0

    def ok(self) -> bool:
        return not self.findings

    def to_lines(self) -> list[str]:
        lines = [f"files_checked {self.files_checked}", f"findings {len(self.findings)}"]
        for f in self.findings:
            loc = f"{f.file}" + (f":{f.line}" if f.line is not None else "")
            lines.append(f"{f.code} {loc} {f.message}")
        return lines


def validate_dataset(directory, cfg: ValidationConfig | None = None) -> DatasetReport:
    """Plausibility and schema checks over every trajectory file in a directory."""
    cfg = cfg or ValidationConfig()
    report = DatasetReport()
    directory = Path(directory)
    for path in sorted(directory.glob("*.txt")):
        try:
            meta, _ = _read_lines(path)
        except (OSError, UnicodeDecodeError) as exc:
            report.findings.append(Finding(path.name, None, "unreadable", str(exc)))
            continue
        if not meta.get("format", "").startswith("trajectories"):
            continue
        report.files_checked += 1
        rate = float(meta.get("rate_hz", cfg.rate))
        try:
            records, _ = read_trajectories(path)
        except FormatError as exc:
            report.findings.append(Finding(path.name, exc.line, "schema", str(exc)))
            continue

        seen: dict[tuple[int, int], int] = {}
        per_track: dict[int, list[tuple[int, TrajectoryRecord, int]]] = {}
        # header lines precede data; recover data line numbers by re-reading
        _, rows = _read_lines(path)
        for (line_no, _), r in zip(rows, records):
            key = (r.frame_id, r.track_id)
            if key in seen:
                report.findings.append(
                    Finding(
                        path.name, line_no, "duplicate",
                        f"duplicate (frame_id, track_id) {key}; first at line {seen[key]}",
                    )
                )
            else:
                seen[key] = line_no
            per_track.setdefault(r.track_id, []).append((r.frame_id, r, line_no))

        for tid, rows_t in per_track.items():
            frames = [f for f, _, _ in rows_t]
            if any(b <= a for a, b in zip(frames, frames[1:])):
                report.findings.append(
                    Finding(path.name, rows_t[0][2], "non_monotone",
                            f"track {tid} frame ids are not strictly increasing")
                )
                continue
            for (fa, ra, _), (fb, rb, line_no) in zip(rows_t, rows_t[1:]):
                dt = (fb - fa) / rate
                step = math.dist((ra.x, ra.y, ra.z), (rb.x, rb.y, rb.z))
                if step / dt > cfg.speed_max:
                    report.findings.append(
                        Finding(path.name, line_no, "speed_bound",
                                f"track {tid} moves {step:.1f} m in {dt:.3f} s "
                                f"({step / dt:.0f} m/s > {cfg.speed_max:.0f})")
                    )
                dv = math.dist((ra.vx, ra.vy, ra.vz), (rb.vx, rb.vy, rb.vz))
                if dv / dt > cfg.accel_max * 3:
                    report.findings.append(
                        Finding(path.name, line_no, "accel_bound",
                                f"track {tid} velocity jumps {dv / dt:.0f} m/s^2")
                    )
            for f, r, line_no in rows_t:
                speed = math.hypot(r.vx, r.vy, r.vz)
                if speed > cfg.speed_max:
                    report.findings.append(
                        Finding(path.name, line_no, "speed_bound",
                                f"track {tid} reports speed {speed:.0f} m/s > {cfg.speed_max:.0f}")
                    )
                accel = math.hypot(r.ax, r.ay, r.az)
                if accel > cfg.accel_max:
                    report.findings.append(
                        Finding(path.name, line_no, "accel_bound",
                                f"track {tid} reports |a| {accel:.0f} m/s^2 > {cfg.accel_max:.0f}")
                    )
    return report


# ---------------------------------------------------------------------------
# Scenario descriptions
# ---------------------------------------------------------------------------


def write_scenario(path, scenario) -> None:
    from .synth import ArcMotion, LineMotion, PiecewiseMotion

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_header(fh, "scenario", frame=scenario.local_frame)
        t = scenario.terrain
        fh.write(f"terrain = {t.kind}\n")
        fh.write(f"grade = {_u(t.grade)}\n")
        fh.write(f"amplitude = {_u(t.amplitude)}\n")
        fh.write(f"wavelength = {_u(t.wavelength)}\n")
        fh.write(f"extent = {_m(t.extent)}\n")
        fh.write(f"mesh_step = {_m(t.mesh_step)}\n")
        c = scenario.camera
        fh.write(f"altitude = {_m(c.altitude)}\n")
        fh.write(f"tilt_deg = {_u(c.tilt_deg)}\n")
        fh.write(f"fx = {_m(c.fx)}\nfy = {_m(c.fy)}\ncx = {_m(c.cx)}\ncy = {_m(c.cy)}\n")
        fh.write(f"width = {c.width}\nheight = {c.height}\n")
        n = scenario.noise
        fh.write(f"detection_sigma = {_u(n.detection_sigma)}\n")
        fh.write(f"depth_bias = {_u(n.depth_bias)}\n")
        fh.write(f"pixel_sigma = {_u(n.pixel_sigma)}\n")
        fh.write(f"gps_sigma = {_u(n.gps_sigma)}\n")
        fh.write(f"outlier_fraction = {_u(n.outlier_fraction)}\n")
        fh.write(f"duration = {_u(scenario.duration)}\n")
        fh.write(f"rate = {_u(scenario.rate)}\n")
        fh.write(f"seed = {scenario.seed}\n")
        fh.write(f"correspondences_per_frame = {scenario.correspondences_per_frame}\n")
        fh.write(f"structure_points = {scenario.structure_points}\n")
        fh.write(f"structure_height = {_m(scenario.structure_height)}\n")
        for spec in scenario.objects:
            l, w, h = spec.dimensions
            m = spec.motion
            if isinstance(m, LineMotion):
                desc = f"line {_m(m.x0)} {_m(m.y0)} {_rad(m.heading)} {_m(m.speed)}"
            elif isinstance(m, ArcMotion):
                desc = (
                    f"arc {_m(m.cx)} {_m(m.cy)} {_m(m.radius)} "
                    f"{_rad(m.angular_speed)} {_rad(m.phase0)}"
                )
            elif isinstance(m, PiecewiseMotion):
                segs = " ".join(f"{_u(d)} {_m(s)}" for d, s in m.segments)
                desc = f"piecewise {_m(m.x0)} {_m(m.y0)} {_rad(m.heading)} {segs}"
            else:
                raise FormatError(f"cannot serialize motion {type(m).__name__}")
            t_end = "inf" if spec.t_end is None else _u(spec.t_end)
            fh.write(
                f"object {spec.category} {_m(l)} {_m(w)} {_m(h)} "
                f"{_u(spec.t_start)} {t_end} {desc}\n"
            )


def read_scenario(path):
    from .synth import (
        ArcMotion,
        CameraSpec,
        LineMotion,
        NoiseSpec,
        ObjectSpec,
        PiecewiseMotion,
        SynthScenario,
        Terrain,
    )

    meta, rows = _read_lines(path)
    _check_format(meta, "scenario", path)
    kv: dict[str, str] = {}
    objects = []
    for line_no, parts in rows:
        if parts[0] == "object":
            if len(parts) < 9:
                raise FormatError("malformed object row", path, line_no)
            category = parts[1]
            dims = tuple(_floats(parts, 2, 3, path, line_no))
            t_start = float(parts[5])
            t_end = None if parts[6] == "inf" else float(parts[6])
            script = parts[7]
            params = _floats(parts, 8, len(parts) - 8, path, line_no)
            if script == "line":
                motion = LineMotion(*params[:4])
            elif script == "arc":
                motion = ArcMotion(*params[:5])
            elif script == "piecewise":
                x0, y0, heading = params[0:3]
                rest = params[3:]
                if len(rest) % 2 != 0:
                    raise FormatError("piecewise segments must be (duration, speed) pairs", path, line_no)
                segments = tuple((rest[i], rest[i + 1]) for i in range(0, len(rest), 2))
                motion = PiecewiseMotion(x0, y0, heading, segments)
            else:
                raise FormatError(f"unknown motion script {script!r}", path, line_no)
            objects.append(
                ObjectSpec(category=category, dimensions=dims, motion=motion,
                           t_start=t_start, t_end=t_end)
            )
        elif "=" in parts:
            eq = parts.index("=")
            kv[" ".join(parts[:eq])] = " ".join(parts[eq + 1 :])
        else:
            raise FormatError(f"unexpected row {parts[0]!r}", path, line_no)

    frame = read_local_frame(meta, path)
    if frame is None:
        raise FormatError("scenario is missing its LocalFrame header", path)
    try:
        terrain = Terrain(
            kind=kv.get("terrain", "flat"),
            grade=float(kv.get("grade", "0")),
            amplitude=float(kv.get("amplitude", "0")),
            wavelength=float(kv.get("wavelength", "30")),
            extent=float(kv.get("extent", "80")),
            mesh_step=float(kv.get("mesh_step", "5")),
        )
        camera = CameraSpec(
            altitude=float(kv.get("altitude", "100")),
            tilt_deg=float(kv.get("tilt_deg", "0")),
            fx=float(kv.get("fx", "1400")),
            fy=float(kv.get("fy", "1400")),
            cx=float(kv.get("cx", "960")),
            cy=float(kv.get("cy", "540")),
            width=int(kv.get("width", "1920")),
            height=int(kv.get("height", "1080")),
        )
        noise = NoiseSpec(
            detection_sigma=float(kv.get("detection_sigma", "0")),
            depth_bias=float(kv.get("depth_bias", "0")),
            pixel_sigma=float(kv.get("pixel_sigma", "0")),
            gps_sigma=float(kv.get("gps_sigma", "0")),
            outlier_fraction=float(kv.get("outlier_fraction", "0")),
        )
        return SynthScenario(
            terrain=terrain,
            camera=camera,
            objects=tuple(objects),
            noise=noise,
            duration=float(kv.get("duration", "10")),
            rate=float(kv.get("rate", "25")),
            seed=int(kv.get("seed", "0")),
            correspondences_per_frame=int(kv.get("correspondences_per_frame", "120")),
            structure_points=int(kv.get("structure_points", "150")),
            structure_height=float(kv.get("structure_height", "25")),
            local_frame=frame,
        )
    except ValueError as exc:
        raise FormatError(f"malformed scenario value: {exc}", path)
