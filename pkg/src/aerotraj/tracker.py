"""Multi-object tracking of refined detections: Hungarian association on 3D
ground-center distance, a constant-acceleration Kalman filter per track, and
offline Rauch-Tung-Striebel smoothing.

The state is [position(3), velocity(3), acceleration(3)] with position-only
measurements.  Orientation is carried alongside the filter (unwrapped and
moving-average smoothed) rather than inside the state.
"""

from __future__ import annotations

import enum
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .refine import Detection3D, RefinedDetection, decompose_euler


class TrackerError(ValueError):
    pass


class TrackStatus(enum.Enum):
    ACTIVE = "ACTIVE"
    COASTING = "COASTING"
    TERMINATED = "TERMINATED"


@dataclass
class TrackerConfig:
    gate: float = 2.0
    category_penalty: float = 1.0
    min_hits: int = 3
    max_coast: int = 12
    min_track_length: int = 3
    sigma_meas: float = 0.05
    sigma_acc: float = 2.0
    rate: float = 25.0
    yaw_window: int = 5
    init_speed_sigma: float = 15.0
    init_acc_sigma: float = 4.0


@dataclass
class TrackState:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    yaw: float
    covariance: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.acceleration = np.asarray(self.acceleration, dtype=float).reshape(3)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(9, 9)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.acceleration])


@dataclass
class Track:
    track_id: int
    category: str
    frames: list[int]
    states: list[TrackState]
    dimensions: np.ndarray
    status: TrackStatus = TrackStatus.TERMINATED
    orientations: np.ndarray | None = None  # (N, 3): yaw, pitch, roll
    measured: np.ndarray | None = None  # (N,) bool: had an associated detection
    # forward-pass filter history needed by the RTS smoother
    filt_x: np.ndarray | None = None
    filt_P: np.ndarray | None = None
    pred_x: np.ndarray | None = None
    pred_P: np.ndarray | None = None
    trans_F: np.ndarray | None = None

    def __post_init__(self):
        self.dimensions = np.asarray(self.dimensions, dtype=float).reshape(3)
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise TrackerError("track frame indices must be strictly increasing")

    def positions(self) -> np.ndarray:
        return np.stack([s.position for s in self.states])

    def velocities(self) -> np.ndarray:
        return np.stack([s.velocity for s in self.states])


# ---------------------------------------------------------------------------
# Kalman filter core (constant acceleration, position measurements)
# ---------------------------------------------------------------------------


def transition_matrix(dt: float) -> np.ndarray:
    F = np.eye(9)
    F[0:3, 3:6] = dt * np.eye(3)
    F[0:3, 6:9] = 0.5 * dt * dt * np.eye(3)
    F[3:6, 6:9] = dt * np.eye(3)
    return F


def process_noise(dt: float, sigma_acc: float) -> np.ndarray:
    # discrete wiener-process acceleration model
    q = sigma_acc**2
    blocks = np.array(
        [
            [dt**4 / 4.0, dt**3 / 2.0, dt**2 / 2.0],
            [dt**3 / 2.0, dt**2, dt],
            [dt**2 / 2.0, dt, 1.0],
        ]
    )
    Q = np.zeros((9, 9))
    for a in range(3):
        for b in range(3):
            Q[3 * a : 3 * a + 3, 3 * b : 3 * b + 3] = q * blocks[a, b] * np.eye(3)
    return Q


_H = np.zeros((3, 9))
_H[:, 0:3] = np.eye(3)


def _nearest_psd(P: np.ndarray) -> np.ndarray:
    sym = 0.5 * (P + P.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() >= 0:
        return sym
    warnings.warn("covariance lost positive semi-definiteness; projecting", RuntimeWarning)
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(vals) @ vecs.T


def _predict(x: np.ndarray, P: np.ndarray, dt: float, sigma_acc: float):
    F = transition_matrix(dt)
    Q = process_noise(dt, sigma_acc)
    return F @ x, F @ P @ F.T + Q, F


def _update(x: np.ndarray, P: np.ndarray, z: np.ndarray, sigma_meas: float):
    R = sigma_meas**2 * np.eye(3)
    S = _H @ P @ _H.T + R
    K = P @ _H.T @ np.linalg.inv(S)
    x_new = x + K @ (z - _H @ x)
    IKH = np.eye(9) - K @ _H
    # Joseph form keeps the update numerically symmetric
    P_new = IKH @ P @ IKH.T + K @ R @ K.T
    try:
        np.linalg.cholesky(P_new + 1e-15 * np.eye(9))
    except np.linalg.LinAlgError:
        P_new = _nearest_psd(P_new)
    return x_new, P_new


def kalman_step(
    state: TrackState,
    dt: float,
    measurement: np.ndarray | None = None,
    sigma_meas: float = 0.05,
    sigma_acc: float = 2.0,
) -> TrackState:
    """One predict(+update) cycle; coasting steps pass measurement=None."""
    if dt <= 0:
        raise TrackerError("dt must be positive")
    x = state.as_vector()
    x, P, _ = _predict(x, state.covariance, dt, sigma_acc)
    if measurement is not None:
        x, P = _update(x, P, np.asarray(measurement, dtype=float).reshape(3), sigma_meas)
    return TrackState(
        position=x[0:3], velocity=x[3:6], acceleration=x[6:9], yaw=state.yaw, covariance=P
    )


# ---------------------------------------------------------------------------
# Association
# ---------------------------------------------------------------------------


def associate(
    predictions: list[TrackState],
    detections: list[RefinedDetection],
    gate: float,
    track_categories: list[str] | None = None,
    category_penalty: float = 0.0,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Minimum-cost bipartite matching on 3D center distance.

    Pairs whose raw distance exceeds the gate are removed after assignment.
    Returns (matches, unmatched_track_indices, unmatched_detection_indices).
    """
    nt, nd = len(predictions), len(detections)
    if nt == 0 or nd == 0:
        return [], list(range(nt)), list(range(nd))
    pred_pos = np.stack([p.position for p in predictions])
    det_pos = np.stack([d.position_world for d in detections])
    dist = np.linalg.norm(pred_pos[:, None, :] - det_pos[None, :, :], axis=2)
    cost = dist.copy()
    if track_categories is not None and category_penalty > 0:
        for i, cat in enumerate(track_categories):
            for j, det in enumerate(detections):
                if det.category != cat:
                    cost[i, j] += category_penalty
    big = gate * 1e6 + 1e6
    cost = np.where(dist > gate, big, cost)
    rows, cols = linear_sum_assignment(cost)
    matches = []
    matched_t, matched_d = set(), set()
    for r, c in zip(rows, cols):
        if dist[r, c] <= gate:
            matches.append((int(r), int(c)))
            matched_t.add(int(r))
            matched_d.add(int(c))
    unmatched_t = [i for i in range(nt) if i not in matched_t]
    unmatched_d = [j for j in range(nd) if j not in matched_d]
    return matches, unmatched_t, unmatched_d


# ---------------------------------------------------------------------------
# RTS smoother
# ---------------------------------------------------------------------------


def rts_smooth(track: Track) -> Track:
    """Backward Rauch-Tung-Striebel pass over the stored forward history.

    The last state is unchanged by construction; smoothed covariances never
    exceed the filtered ones in the Loewner order.
    """
    if track.filt_x is None or track.pred_x is None:
        raise TrackerError("track lacks forward-pass history required for smoothing")
    n = len(track.filt_x)
    if n <= 1:
        return track
    xs = track.filt_x.copy()
    Ps = track.filt_P.copy()
    for k in range(n - 2, -1, -1):
        F = track.trans_F[k + 1]
        P_pred = track.pred_P[k + 1]
        C = track.filt_P[k] @ F.T @ np.linalg.inv(P_pred)
        xs[k] = track.filt_x[k] + C @ (xs[k + 1] - track.pred_x[k + 1])
        Ps[k] = track.filt_P[k] + C @ (Ps[k + 1] - P_pred) @ C.T
        Ps[k] = 0.5 * (Ps[k] + Ps[k].T)

    states = [
        TrackState(
            position=xs[k, 0:3],
            velocity=xs[k, 3:6],
            acceleration=xs[k, 6:9],
            yaw=track.states[k].yaw if track.states else 0.0,
            covariance=Ps[k],
        )
        for k in range(n)
    ]
    return Track(
        track_id=track.track_id,
        category=track.category,
        frames=list(track.frames),
        states=states,
        dimensions=track.dimensions,
        status=track.status,
        orientations=track.orientations,
        measured=track.measured,
        filt_x=track.filt_x,
        filt_P=track.filt_P,
        pred_x=track.pred_x,
        pred_P=track.pred_P,
        trans_F=track.trans_F,
    )


# ---------------------------------------------------------------------------
# Kinematics finalization
# ---------------------------------------------------------------------------


def unwrap_angles(angles: np.ndarray) -> np.ndarray:
    return np.unwrap(np.asarray(angles, dtype=float))


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or len(values) <= 2:
        return values
    half = window // 2
    padded = np.pad(values, (half, half), mode="edge")
    kernel = np.ones(window) / window
    return np.convolve(padded, kernel, mode="valid")[: len(values)]


def finalize_kinematics(track: Track, rate: float, yaw_window: int = 5) -> Track:
    """Fill per-state yaw from the detection orientations.

    Yaw is unwrapped (no jumps > pi) and moving-average smoothed; frames
    without a detection get linearly interpolated yaw.  Velocity and
    acceleration already live in the smoothed states.
    """
    if track.orientations is None or len(track.states) == 0:
        return track
    yaw = track.orientations[:, 0].copy()
    measured = (
        track.measured
        if track.measured is not None
        else np.ones(len(track.states), dtype=bool)
    )
    idx = np.arange(len(yaw))
    if measured.any() and not measured.all():
        good = np.where(measured)[0]
        unwrapped_good = unwrap_angles(yaw[good])
        yaw = np.interp(idx, good, unwrapped_good)
    else:
        yaw = unwrap_angles(yaw)
    yaw = _moving_average(yaw, yaw_window)
    pitch = _moving_average(track.orientations[:, 1], yaw_window)
    roll = _moving_average(track.orientations[:, 2], yaw_window)
    for k, s in enumerate(track.states):
        s.yaw = float(yaw[k])
    track.orientations = np.stack([yaw, pitch, roll], axis=1)
    return track


# ---------------------------------------------------------------------------
# The frame loop
# ---------------------------------------------------------------------------


class _TrackBuilder:
    def __init__(self, track_id: int, det: RefinedDetection, frame: int, cfg: TrackerConfig):
        self.track_id = track_id
        self.cfg = cfg
        x = np.zeros(9)
        x[0:3] = det.position_world
        P = np.zeros((9, 9))
        P[0:3, 0:3] = cfg.sigma_meas**2 * np.eye(3)
        P[3:6, 3:6] = cfg.init_speed_sigma**2 * np.eye(3)
        P[6:9, 6:9] = cfg.init_acc_sigma**2 * np.eye(3)
        self.frames = [frame]
        self.filt_x = [x]
        self.filt_P = [P]
        self.pred_x = [x.copy()]
        self.pred_P = [P.copy()]
        self.trans_F = [np.eye(9)]
        self.detections: list[RefinedDetection | None] = [det]
        self.hits = 1
        self.misses = 0
        self.confirmed = cfg.min_hits <= 1
        self.status = TrackStatus.ACTIVE
        self.pending_pred: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    @property
    def position(self) -> np.ndarray:
        if self.pending_pred is not None:
            return self.pending_pred[0][0:3]
        return self.filt_x[-1][0:3]

    @property
    def category_votes(self) -> Counter:
        return Counter(d.category for d in self.detections if d is not None)

    def predict(self, dt: float):
        x, P, F = _predict(self.filt_x[-1], self.filt_P[-1], dt, self.cfg.sigma_acc)
        self.pending_pred = (x, P, F)

    def commit(self, frame: int, det: RefinedDetection | None):
        x_pred, P_pred, F = self.pending_pred
        self.pending_pred = None
        if det is not None:
            x, P = _update(x_pred, P_pred, det.position_world, self.cfg.sigma_meas)
            self.hits += 1
            self.misses = 0
            if self.hits >= self.cfg.min_hits:
                self.confirmed = True
            self.status = TrackStatus.ACTIVE
        else:
            x, P = x_pred, P_pred
            self.misses += 1
            self.status = TrackStatus.COASTING
        self.frames.append(frame)
        self.filt_x.append(x)
        self.filt_P.append(P)
        self.pred_x.append(x_pred)
        self.pred_P.append(P_pred)
        self.trans_F.append(F)
        self.detections.append(det)

    def predicted_state(self) -> TrackState:
        x, P, _ = self.pending_pred
        return TrackState(position=x[0:3], velocity=x[3:6], acceleration=x[6:9], yaw=0.0, covariance=P)

    def to_track(self) -> Track | None:
        # trim trailing coasting-only steps; they carry no observation
        last = len(self.detections) - 1
        while last >= 0 and self.detections[last] is None:
            last -= 1
        n = last + 1
        if n < max(self.cfg.min_track_length, 1) or not self.confirmed:
            return None
        frames = self.frames[:n]
        filt_x = np.stack(self.filt_x[:n])
        filt_P = np.stack(self.filt_P[:n])
        pred_x = np.stack(self.pred_x[:n])
        pred_P = np.stack(self.pred_P[:n])
        trans_F = np.stack(self.trans_F[:n])
        dets = self.detections[:n]
        measured = np.array([d is not None for d in dets])

        orientations = np.zeros((n, 3))
        for k, d in enumerate(dets):
            if d is not None:
                phi, theta, psi = decompose_euler(d.orientation_world)
                orientations[k] = (psi, theta, phi)
        dims = np.median(
            np.stack([d.dimensions for d in dets if d is not None]), axis=0
        )
        category = self.category_votes.most_common(1)[0][0]
        states = [
            TrackState(
                position=filt_x[k, 0:3],
                velocity=filt_x[k, 3:6],
                acceleration=filt_x[k, 6:9],
                yaw=orientations[k, 0],
                covariance=filt_P[k],
            )
            for k in range(n)
        ]
        return Track(
            track_id=self.track_id,
            category=category,
            frames=frames,
            states=states,
            dimensions=dims,
            status=TrackStatus.TERMINATED,
            orientations=orientations,
            measured=measured,
            filt_x=filt_x,
            filt_P=filt_P,
            pred_x=pred_x,
            pred_P=pred_P,
            trans_F=trans_F,
        )


def run_tracker(detections: list[RefinedDetection], cfg: TrackerConfig | None = None) -> list[Track]:
    """Associate refined detections into tracks, filter, smooth, finalize.

    Detections must be sorted by frame index.  Track ids are unique within a
    run and never reused.
    """
    cfg = cfg or TrackerConfig()
    if any(
        b.frame_index < a.frame_index for a, b in zip(detections, detections[1:])
    ):
        raise TrackerError("detections must be sorted by frame index")
    if not detections:
        return []

    by_frame: dict[int, list[RefinedDetection]] = {}
    for d in detections:
        by_frame.setdefault(d.frame_index, []).append(d)
    first_frame = min(by_frame)
    last_frame = max(by_frame)
    dt = 1.0 / cfg.rate

    next_id = 0
    live: list[_TrackBuilder] = []
    finished: list[_TrackBuilder] = []

    for frame in range(first_frame, last_frame + 1):
        dets = by_frame.get(frame, [])
        if frame > first_frame:
            for tb in live:
                tb.predict(dt)
            preds = [tb.predicted_state() for tb in live]
            cats = [tb.category_votes.most_common(1)[0][0] for tb in live]
            matches, unmatched_t, unmatched_d = associate(
                preds, dets, cfg.gate, cats, cfg.category_penalty
            )
            for ti, dj in matches:
                live[ti].commit(frame, dets[dj])
            for ti in unmatched_t:
                live[ti].commit(frame, None)
            new_dets = [dets[j] for j in unmatched_d]
        else:
            new_dets = dets

        still_live = []
        for tb in live:
            if tb.misses > cfg.max_coast or (not tb.confirmed and tb.misses >= 2):
                finished.append(tb)
            else:
                still_live.append(tb)
        live = still_live

        for det in new_dets:
            live.append(_TrackBuilder(next_id, det, frame, cfg))
            next_id += 1

    finished.extend(live)

    tracks = []
    for tb in sorted(finished, key=lambda t: t.track_id):
        track = tb.to_track()
        if track is None:
            continue
        track = rts_smooth(track)
        track = finalize_kinematics(track, cfg.rate, cfg.yaw_window)
        tracks.append(track)
    return tracks
