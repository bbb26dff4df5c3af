from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerotraj.analytics import (
    AnalyticsError,
    EventKind,
    MiningConfig,
    auto_conflict_zones,
    class_stats,
    count_direction_switches,
    histogram,
    mine_parking,
    mine_pet,
    mine_ttc,
    point_in_polygon,
    ttc_pair,
)
from aerotraj.rotations import rot_z
from aerotraj.tracker import Track, TrackState, TrackStatus


def make_track(tid, frames, positions, velocities, yaws=None, cat="car",
               dims=(4.5, 1.9, 1.6)):
    n = len(frames)
    yaws = yaws if yaws is not None else [0.0] * n
    states = [
        TrackState(positions[i], velocities[i], np.zeros(3), yaws[i], np.eye(9))
        for i in range(n)
    ]
    return Track(
        tid, cat, list(frames), states, np.array(dims), TrackStatus.TERMINATED,
        orientations=np.stack([yaws, np.zeros(n), np.zeros(n)], axis=1),
    )


def line_track(tid, start, velocity, n_frames, rate=25.0, cat="car", dims=(4.5, 1.9, 1.6)):
    start = np.asarray(start, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    frames = list(range(n_frames))
    pos = [start + velocity * f / rate for f in frames]
    vel = [velocity] * n_frames
    yaw = float(np.arctan2(velocity[1], velocity[0]))
    return make_track(tid, frames, pos, vel, [yaw] * n_frames, cat, dims)


class TestClassStats:
    def test_duration(self):
        # a track spanning 250 frame intervals at 25 Hz lasts 10 s
        tr = line_track(0, [0, 0, 0], [1, 0, 0], 251)
        stats = class_stats([tr], rate=25.0)
        assert stats[0].mean_duration == pytest.approx(10.0)

    def test_distance_and_speed(self):
        tr = line_track(0, [0, 0, 0], [10, 0, 0], 251)
        stats = class_stats([tr], rate=25.0)
        assert stats[0].mean_distance == pytest.approx(100.0)
        assert stats[0].mean_speed == pytest.approx(10.0)

    def test_counts_partition_total(self):
        tracks = [
            line_track(i, [i, 0, 0], [1, 0, 0], 10, cat=cat)
            for i, cat in enumerate(["car", "car", "pedestrian", "bus", "car"])
        ]
        stats = class_stats(tracks, rate=25.0)
        assert sum(s.trajectory_count for s in stats) == len(tracks)
        by_cat = {s.category: s.trajectory_count for s in stats}
        assert by_cat == {"car": 3, "pedestrian": 1, "bus": 1}


class TestTtc:
    def test_head_on_analytic(self):
        # 30 m gap closing at 10 m/s with point-like extents: TTC = 3.0 s
        a = line_track(0, [0, 0, 0], [5, 0, 0], 10, dims=(1e-9, 1e-9, 1e-9))
        b = line_track(1, [30, 0, 0], [-5, 0, 0], 10, dims=(1e-9, 1e-9, 1e-9))
        events = mine_ttc([a, b], threshold=4.0)
        assert len(events) == 1
        assert events[0].value == pytest.approx(3.0, abs=1e-12)
        assert events[0].kind == EventKind.TTC

    def test_diverging_no_event(self):
        a = line_track(0, [0, 0, 0], [0, 0, 0], 10, dims=(1e-9, 1e-9, 1e-9))
        b = line_track(1, [30, 0, 0], [5, 0, 0], 10, dims=(1e-9, 1e-9, 1e-9))
        assert mine_ttc([a, b], threshold=10.0) == []

    def test_pairs_beyond_distance_ignored(self):
        cfg = MiningConfig(ttc_pair_distance=50.0)
        a = line_track(0, [0, 0, 0], [10, 0, 0], 5)
        b = line_track(1, [200, 0, 0], [-10, 0, 0], 5)
        assert mine_ttc([a, b], threshold=30.0, cfg=cfg) == []

    def test_matches_dense_time_stepping_oracle(self):
        rng = np.random.default_rng(0)
        cfg = MiningConfig()
        for _ in range(50):
            p1 = rng.uniform(-20, 20, 2)
            p2 = rng.uniform(-20, 20, 2)
            v1 = rng.uniform(-8, 8, 2)
            v2 = rng.uniform(-8, 8, 2)
            r_sum = rng.uniform(0.5, 4.0)
            dp = np.append(p2 - p1, 0.0)[:2]
            dv = (v2 - v1)[:2]
            tau = ttc_pair(dp, dv, r_sum)
            # oracle: densely step the extrapolated motion at 1 ms
            ts = np.arange(0.0, 30.0, 1e-3)
            dist = np.linalg.norm(dp[None, :] + ts[:, None] * dv[None, :], axis=1)
            hits = np.where(dist <= r_sum)[0]
            if np.linalg.norm(dp) <= r_sum:
                assert tau is None  # already overlapping: not an approach
                continue
            if len(hits) == 0:
                assert tau is None or tau > 30.0
            else:
                assert tau is not None
                assert tau == pytest.approx(ts[hits[0]], abs=2e-3)

    def test_rigid_invariance(self):
        a = line_track(0, [0, 0, 0], [5, 0, 0], 20)
        b = line_track(1, [40, 1, 0], [-5, 0, 0], 20)
        ev1 = mine_ttc([a, b], threshold=10.0)

        Q = rot_z(0.83)
        shift = np.array([250.0, -90.0, 3.0])

        def transform(tr, tid):
            pos = [Q @ s.position + shift for s in tr.states]
            vel = [Q @ s.velocity for s in tr.states]
            return make_track(tid, tr.frames, pos, vel, dims=tr.dimensions)

        ev2 = mine_ttc([transform(a, 0), transform(b, 1)], threshold=10.0)
        assert len(ev1) == len(ev2) == 1
        assert ev2[0].value == pytest.approx(ev1[0].value, abs=1e-9)


class TestPet:
    def test_fig_style_value(self):
        # first user leaves the zone at 10.0 s, second enters at 11.1 s
        rate = 10.0
        cfg = MiningConfig(rate=rate)
        a_frames = list(range(0, 101))
        a = make_track(0, a_frames, [[0.5 * f, 0, 0] for f in a_frames],
                       [[5, 0, 0]] * len(a_frames))
        b_frames = list(range(0, 300))
        b = make_track(1, b_frames, [[50.0, 0.5 * (f - 113), 0] for f in b_frames],
                       [[0, 5, 0]] * len(b_frames))
        zone = np.array([[49.0, -1.0], [51.0, -1.0], [51.0, 1.0], [49.0, 1.0]])
        events = mine_pet([a, b], [zone], cfg)
        assert len(events) == 1
        assert events[0].value == pytest.approx(1.1, abs=1e-9)
        assert events[0].track_ids == (0, 1)

    def test_order_independence(self):
        rate = 10.0
        cfg = MiningConfig(rate=rate)
        a = make_track(0, list(range(101)), [[0.5 * f, 0, 0] for f in range(101)],
                       [[5, 0, 0]] * 101)
        b = make_track(1, list(range(300)), [[50.0, 0.5 * (f - 113), 0] for f in range(300)],
                       [[0, 5, 0]] * 300)
        zone = np.array([[49.0, -1.0], [51.0, -1.0], [51.0, 1.0], [49.0, 1.0]])
        ev_ab = mine_pet([a, b], [zone], cfg)
        ev_ba = mine_pet([b, a], [zone], cfg)
        assert len(ev_ab) == len(ev_ba) == 1
        assert ev_ab[0].value == ev_ba[0].value
        assert ev_ab[0].track_ids == ev_ba[0].track_ids

    def test_overlapping_occupancy_skipped(self):
        rate = 10.0
        cfg = MiningConfig(rate=rate)
        a = make_track(0, list(range(101)), [[0.5 * f, 0, 0] for f in range(101)],
                       [[5, 0, 0]] * 101)
        b = make_track(1, list(range(300)), [[50.0, 0.5 * (f - 99), 0] for f in range(300)],
                       [[0, 5, 0]] * 300)
        zone = np.array([[49.0, -1.0], [51.0, -1.0], [51.0, 1.0], [49.0, 1.0]])
        assert mine_pet([a, b], [zone], cfg) == []

    def test_pet_above_cap_dropped(self):
        rate = 10.0
        cfg = MiningConfig(rate=rate, pet_max=10.0)
        a = make_track(0, list(range(101)), [[0.5 * f, 0, 0] for f in range(101)],
                       [[5, 0, 0]] * 101)
        b = make_track(1, list(range(400)), [[50.0, 0.5 * (f - 350), 0] for f in range(400)],
                       [[0, 5, 0]] * 400)
        zone = np.array([[49.0, -1.0], [51.0, -1.0], [51.0, 1.0], [49.0, 1.0]])
        assert mine_pet([a, b], [zone], cfg) == []

    def test_auto_zones_find_crossing(self):
        a = line_track(0, [-20, 0, 0], [5, 0, 0], 100, rate=10.0)
        b = line_track(1, [0, -20, 0], [0, 5, 0], 100, rate=10.0)
        zones = auto_conflict_zones([a, b], cell=2.0)
        assert len(zones) >= 1
        assert any(point_in_polygon(np.array([0.0, 0.0]), z) for z in zones)

    def test_occupancy_matches_brute_force(self):
        # frame-resolution occupancy oracle
        rate = 10.0
        cfg = MiningConfig(rate=rate)
        a = line_track(0, [-20, 0, 0], [5, 0, 0], 200, rate=rate)
        b_frames = list(range(200))
        b = make_track(1, b_frames, [[0.0, -30 + 0.5 * f, 0] for f in b_frames],
                       [[0, 5, 0]] * 200)
        zone = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
        events = mine_pet([a, b], [zone], cfg)

        def occupancy(track):
            inside = [f for f, s in zip(track.frames, track.states)
                      if point_in_polygon(s.position[:2], zone)]
            return inside[0] / rate, inside[-1] / rate

        a_in, a_out = occupancy(a)
        b_in, b_out = occupancy(b)
        expected = b_in - a_out if a_out < b_in else a_in - b_out
        assert len(events) == 1
        assert events[0].value == pytest.approx(expected, abs=1e-12)


class TestParking:
    def _park_track(self, rate=10.0, pattern=((1.0, 50), (-1.0, 30), (1.0, 20), (0.0, 50))):
        vs = []
        for speed, count in pattern:
            vs.extend([speed] * count)
        xs = np.concatenate([[0], np.cumsum(vs)[:-1]]) / rate
        n = len(vs)
        return make_track(2, list(range(n)), [[x, 0, 0] for x in xs],
                          [[v, 0, 0] for v in vs])

    def test_forward_reverse_forward_two_switches(self):
        cfg = MiningConfig(rate=10.0)
        track = self._park_track()
        region = np.array([[-5.0, -5.0], [100.0, -5.0], [100.0, 5.0], [-5.0, 5.0]])
        events = mine_parking([track], region, cfg)
        assert len(events) == 1
        assert events[0].direction_switches == 2
        assert events[0].kind == EventKind.PARKING

    def test_drive_through_no_event(self):
        cfg = MiningConfig(rate=10.0)
        track = self._park_track(pattern=((2.0, 100),))
        region = np.array([[-5.0, -5.0], [100.0, -5.0], [100.0, 5.0], [-5.0, 5.0]])
        assert mine_parking([track], region, cfg) == []

    def test_pure_forward_park(self):
        cfg = MiningConfig(rate=10.0)
        track = self._park_track(pattern=((1.0, 80), (0.0, 50)))
        region = np.array([[-5.0, -5.0], [100.0, -5.0], [100.0, 5.0], [-5.0, 5.0]])
        events = mine_parking([track], region, cfg)
        assert len(events) == 1
        assert events[0].value == pytest.approx(8.0)
        assert events[0].direction_switches == 0

    def test_non_vehicle_ignored(self):
        cfg = MiningConfig(rate=10.0)
        track = self._park_track()
        track.category = "pedestrian"
        region = np.array([[-5.0, -5.0], [100.0, -5.0], [100.0, 5.0], [-5.0, 5.0]])
        assert mine_parking([track], region, cfg) == []

    def test_switch_count_time_reparameterization_invariant(self):
        v = np.array([1.0] * 50 + [-1.0] * 30 + [1.0] * 20)
        base = count_direction_switches(v, 0.15)
        stretched = count_direction_switches(np.repeat(v, 4), 0.15)
        assert base == stretched == 2

    def test_hysteresis_suppresses_noise(self):
        rng = np.random.default_rng(0)
        v = np.full(200, 0.05) + rng.normal(0, 0.03, 200)  # jitter around slow forward
        assert count_direction_switches(v, 0.15) == 0


class TestHistogram:
    def test_left_closed_bins(self):
        h = histogram([0.5, 1.5, 1.6], 1.0)
        assert h.bin_left.tolist() == [0.0, 1.0]
        assert h.counts.tolist() == [1, 2]

    def test_empty_rejected(self):
        with pytest.raises(AnalyticsError):
            histogram([], 1.0)

    def test_bad_width_rejected(self):
        with pytest.raises(AnalyticsError):
            histogram([1.0], 0.0)

    @settings(max_examples=60, deadline=None)
    @given(
        values=st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=60),
        width=st.floats(min_value=0.1, max_value=10.0),
    )
    def test_counts_conserved(self, values, width):
        h = histogram(values, width)
        assert int(h.counts.sum()) == len(values)
