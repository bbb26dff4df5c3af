"""Per-class trajectory statistics and scenario mining: time-to-collision,
post-encroachment time, parking maneuvers with direction switches, and
plot-ready histograms.

TTC here is the time until bounding-circle contact under constant-velocity
extrapolation in the plan view, with circle radius equal to half the box
diagonal.  The metric definition matters more than any one distribution, so
it is documented here and frozen by the tests.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .categories import VEHICLE_CLASSES
from .tracker import Track

logger = logging.getLogger(__name__)


class AnalyticsError(ValueError):
    pass


class EventKind(enum.Enum):
    TTC = "TTC"
    PET = "PET"
    PARKING = "PARKING"


@dataclass
class ClassStats:
    category: str
    trajectory_count: int
    mean_duration: float
    mean_distance: float
    mean_speed: float


@dataclass
class ScenarioEvent:
    kind: EventKind
    track_ids: tuple[int, ...]
    t_event: float
    value: float
    location: np.ndarray
    direction_switches: int = 0

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=float).reshape(3)
        if self.value < 0:
            raise AnalyticsError("event value must be non-negative")


@dataclass
class MiningConfig:
    rate: float = 25.0
    ttc_threshold: float = 4.0
    ttc_pair_distance: float = 50.0
    pet_max: float = 10.0
    pet_zone_cell: float = 2.0
    parking_stop_speed: float = 0.2
    parking_stop_duration: float = 3.0
    switch_hysteresis: float = 0.15


# ---------------------------------------------------------------------------
# Per-class statistics
# ---------------------------------------------------------------------------


def track_duration(track: Track, rate: float) -> float:
    return (track.frames[-1] - track.frames[0]) / rate


def track_distance(track: Track) -> float:
    pos = track.positions()
    if len(pos) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))


def class_stats(tracks: list[Track], rate: float = 25.0) -> list[ClassStats]:
    """Count, mean duration, mean arc length and mean speed per category."""
    groups: dict[str, list[Track]] = {}
    for t in tracks:
        groups.setdefault(t.category, []).append(t)
    out = []
    for category in sorted(groups):
        ts = groups[category]
        durations = [track_duration(t, rate) for t in ts]
        distances = [track_distance(t) for t in ts]
        speeds = [float(np.mean([s.speed for s in t.states])) for t in ts]
        out.append(
            ClassStats(
                category=category,
                trajectory_count=len(ts),
                mean_duration=float(np.mean(durations)),
                mean_distance=float(np.mean(distances)),
                mean_speed=float(np.mean(speeds)),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Time-to-collision
# ---------------------------------------------------------------------------


def plan_radius(track: Track) -> float:
    """Half the box diagonal in plan view."""
    l, w, _ = track.dimensions
    return 0.5 * float(np.hypot(l, w))


def ttc_pair(dp: np.ndarray, dv: np.ndarray, radius_sum: float) -> float | None:
    """Smallest tau > 0 with ||dp + dv tau|| = radius_sum, else None."""
    a = float(np.dot(dv, dv))
    b = 2.0 * float(np.dot(dp, dv))
    c = float(np.dot(dp, dp)) - radius_sum**2
    if c <= 0:
        # already overlapping; not an approach
        return None
    if a < 1e-14:
        return None
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return None
    sqrt_disc = float(np.sqrt(disc))
    tau = (-b - sqrt_disc) / (2.0 * a)
    if tau <= 0:
        return None
    return tau


def mine_ttc(tracks: list[Track], threshold: float = 4.0, cfg: MiningConfig | None = None) -> list[ScenarioEvent]:
    """Per-pair minimum TTC events at or below the threshold.

    For every frame where two tracks coexist within the pairing distance the
    constant-velocity TTC is evaluated; one event per pair records the
    minimum.
    """
    cfg = cfg or MiningConfig()
    frame_maps = [{f: i for i, f in enumerate(t.frames)} for t in tracks]
    events = []
    for ia in range(len(tracks)):
        for ib in range(ia + 1, len(tracks)):
            ta, tb = tracks[ia], tracks[ib]
            shared = sorted(set(ta.frames) & set(tb.frames))
            if not shared:
                continue
            r_sum = plan_radius(ta) + plan_radius(tb)
            best = None
            for f in shared:
                sa = ta.states[frame_maps[ia][f]]
                sb = tb.states[frame_maps[ib][f]]
                dp = (sb.position - sa.position)[:2]
                if np.linalg.norm(dp) > cfg.ttc_pair_distance:
                    continue
                dv = (sb.velocity - sa.velocity)[:2]
                tau = ttc_pair(dp, dv, r_sum)
                if tau is None or tau > threshold:
                    continue
                if best is None or tau < best[0]:
                    mid = 0.5 * (sa.position + sb.position)
                    best = (tau, f / cfg.rate, mid)
            if best is not None:
                events.append(
                    ScenarioEvent(
                        kind=EventKind.TTC,
                        track_ids=(ta.track_id, tb.track_id),
                        t_event=best[1],
                        value=best[0],
                        location=best[2],
                    )
                )
    return events


# ---------------------------------------------------------------------------
# Post-encroachment time
# ---------------------------------------------------------------------------


def point_in_polygon(point: np.ndarray, polygon: np.ndarray) -> bool:
    """Even-odd rule test in the plan view."""
    x, y = float(point[0]), float(point[1])
    inside = False
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i][0], polygon[i][1]
        x2, y2 = polygon[(i + 1) % n][0], polygon[(i + 1) % n][1]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def _segments_intersect(p1, p2, p3, p4):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        t = d1 / (d1 - d2)
        return p1 + t * (p2 - p1)
    return None


def auto_conflict_zones(tracks: list[Track], cell: float = 2.0) -> list[np.ndarray]:
    """Square cells around plan-view crossing points of track pairs."""
    zones: set[tuple[int, int]] = set()
    paths = [t.positions()[:, :2] for t in tracks]
    for ia in range(len(tracks)):
        for ib in range(ia + 1, len(tracks)):
            pa, pb = paths[ia], paths[ib]
            for i in range(len(pa) - 1):
                for j in range(len(pb) - 1):
                    hit = _segments_intersect(pa[i], pa[i + 1], pb[j], pb[j + 1])
                    if hit is not None:
                        zones.add((int(np.floor(hit[0] / cell)), int(np.floor(hit[1] / cell))))
    polys = []
    for gx, gy in sorted(zones):
        x0, y0 = gx * cell, gy * cell
        polys.append(
            np.array([[x0, y0], [x0 + cell, y0], [x0 + cell, y0 + cell], [x0, y0 + cell]])
        )
    return polys


def _occupancy_interval(track: Track, polygon: np.ndarray, rate: float):
    """(entry_time, exit_time) of the first contiguous in-zone interval."""
    inside = np.array([point_in_polygon(p, polygon) for p in track.positions()[:, :2]])
    if not inside.any():
        return None
    idx = np.where(inside)[0]
    end = idx[0]
    for k in idx[1:]:
        if k != end + 1:
            break
        end = k
    return track.frames[idx[0]] / rate, track.frames[end] / rate


def mine_pet(
    tracks: list[Track],
    conflict_zones: list[np.ndarray] | None = None,
    cfg: MiningConfig | None = None,
) -> list[ScenarioEvent]:
    """Post-encroachment times through shared conflict zones.

    PET = entry time of the second road user minus exit time of the first,
    for disjoint occupancy intervals; overlapping occupancy is a conflict,
    not a PET event, and is skipped with a diagnostic.
    """
    cfg = cfg or MiningConfig()
    zones = conflict_zones if conflict_zones is not None else auto_conflict_zones(tracks, cfg.pet_zone_cell)
    events = []
    for zone in zones:
        zc = np.append(zone.mean(axis=0), 0.0)
        occupied = []
        for t in tracks:
            interval = _occupancy_interval(t, zone, cfg.rate)
            if interval is not None:
                occupied.append((t, interval))
        for ia in range(len(occupied)):
            for ib in range(ia + 1, len(occupied)):
                (ta, (a_in, a_out)), (tb, (b_in, b_out)) = occupied[ia], occupied[ib]
                if a_out < b_in:
                    first, second, pet = ta, tb, b_in - a_out
                elif b_out < a_in:
                    first, second, pet = tb, ta, a_in - b_out
                else:
                    logger.debug(
                        "tracks %d and %d occupy a zone simultaneously; conflict, not PET",
                        ta.track_id,
                        tb.track_id,
                    )
                    continue
                if pet <= cfg.pet_max:
                    events.append(
                        ScenarioEvent(
                            kind=EventKind.PET,
                            track_ids=(first.track_id, second.track_id),
                            t_event=a_out if first is ta else b_out,
                            value=float(pet),
                            location=zc,
                        )
                    )
    return events


# ---------------------------------------------------------------------------
# Parking maneuvers
# ---------------------------------------------------------------------------


def count_direction_switches(longitudinal_v: np.ndarray, hysteresis: float) -> int:
    """Sign changes of the longitudinal velocity with a +-hysteresis dead band."""
    regime = 0
    switches = 0
    for v in longitudinal_v:
        if v > hysteresis:
            if regime == -1:
                switches += 1
            regime = 1
        elif v < -hysteresis:
            if regime == 1:
                switches += 1
            regime = -1
    return switches


def mine_parking(
    tracks: list[Track],
    parking_region: np.ndarray,
    cfg: MiningConfig | None = None,
) -> list[ScenarioEvent]:
    """Parking maneuvers of vehicle-class tracks inside a region polygon.

    A maneuver runs from the last entry into the region to the start of a
    sustained stop (speed < parking_stop_speed held >= parking_stop_duration).
    """
    cfg = cfg or MiningConfig()
    region = np.asarray(parking_region, dtype=float)
    events = []
    stop_steps = max(1, int(round(cfg.parking_stop_duration * cfg.rate)))
    for track in tracks:
        if track.category not in VEHICLE_CLASSES:
            continue
        pos = track.positions()
        inside = np.array([point_in_polygon(p, region) for p in pos[:, :2]])
        if not inside.any():
            continue
        speeds = np.array([s.speed for s in track.states])
        slow = speeds < cfg.parking_stop_speed
        # first index where a sustained stop begins inside the region
        stop_start = None
        run = 0
        for k in range(len(track.states)):
            if slow[k] and inside[k]:
                run += 1
                if run >= stop_steps:
                    stop_start = k - run + 1
                    break
            else:
                run = 0
        if stop_start is None:
            continue
        # last entry into the region at or before the stop
        entry = stop_start
        while entry > 0 and inside[entry - 1]:
            entry -= 1
        t_entry = track.frames[entry] / cfg.rate
        t_stop = track.frames[stop_start] / cfg.rate
        heading = np.stack([np.cos([s.yaw for s in track.states]), np.sin([s.yaw for s in track.states])], axis=1)
        v_long = np.einsum("ij,ij->i", np.stack([s.velocity[:2] for s in track.states]), heading)
        switches = count_direction_switches(v_long[entry : stop_start + 1], cfg.switch_hysteresis)
        events.append(
            ScenarioEvent(
                kind=EventKind.PARKING,
                track_ids=(track.track_id,),
                t_event=t_stop,
                value=float(t_stop - t_entry),
                location=pos[stop_start],
                direction_switches=switches,
            )
        )
    return events


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------


@dataclass
class Histogram:
    bin_left: np.ndarray
    bin_right: np.ndarray
    counts: np.ndarray


def histogram(values, bin_width: float) -> Histogram:
    """Fixed-width, left-closed bins aligned to multiples of the width."""
    if bin_width <= 0:
        raise AnalyticsError("bin width must be positive")
    values = np.asarray(list(values), dtype=float)
    if len(values) == 0:
        raise AnalyticsError("cannot histogram an empty collection")
    lo = np.floor(values.min() / bin_width)
    hi = np.floor(values.max() / bin_width) + 1
    edges = np.arange(lo, hi + 1) * bin_width
    counts, _ = np.histogram(values, bins=edges)
    return Histogram(bin_left=edges[:-1], bin_right=edges[1:], counts=counts)
