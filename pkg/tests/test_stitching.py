import math

import numpy as np
import pytest

from helpers import bev_det, make_track
from trafficbev.stitching import (
    Fragment,
    JoinCandidate,
    StitchConfig,
    build_fragments,
    candidate_select,
    deflection_deg,
    douglas_peucker,
    find_joinable,
    join_tracks,
)

FPS = 15


def split_track(tid_a, tid_b, gap=7, n_each=40, step=5.0, y=50.0, x0=0.0):
    """One constant-velocity vehicle split into two tracks around a gap."""
    a = make_track(tid_a, [(k, x0 + step * k, y) for k in range(n_each)])
    start = n_each + gap - 1
    b = make_track(tid_b, [(start + k, x0 + step * (start + k), y) for k in range(n_each)])
    return a, b


class TestDouglasPeucker:
    def test_collinear_collapses_to_endpoints(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 5.0]])
        out = douglas_peucker(pts, 1.0)
        assert out.shape == (2, 2)
        assert np.array_equal(out, pts[[0, -1]])

    def test_corner_kept(self):
        pts = np.array([[0.0, 0.0], [5.0, 0.0], [5.0, 5.0]])
        out = douglas_peucker(pts, 1.0)
        assert np.array_equal(out, pts)

    def test_small_wiggle_removed(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.4], [2.0, -0.3], [3.0, 0.0]])
        assert len(douglas_peucker(pts, 1.0)) == 2


class TestBuildFragments:
    def test_begin_and_end_per_track(self):
        t = make_track(1, [(k, 5.0 * k, 10.0) for k in range(10)])
        frags = build_fragments([t])
        assert [f.kind for f in frags] == ["b", "e"]
        b, e = frags
        assert b.frame == 0 and e.frame == 9
        assert b.anchor is t.entries[0].detection
        assert e.anchor is t.entries[-1].detection

    def test_straight_track_polyline_two_points(self):
        t = make_track(1, [(k, 5.0 * k, 10.0) for k in range(30)])
        frags = build_fragments([t], epsilon=1.0)
        assert len(frags[0].polyline) == 2

    def test_single_state_track_skipped(self):
        t = make_track(1, [(0, 5.0, 10.0)])
        assert build_fragments([t]) == []

    def test_direction_label(self):
        fwd = make_track(1, [(k, 5.0 * k, 10.0) for k in range(10)])
        back = make_track(2, [(k, 100.0 - 5.0 * k, 10.0) for k in range(10)])
        frags = build_fragments([fwd, back])
        assert frags[0].direction == 1
        assert frags[2].direction == 2


class TestDeflection:
    def test_same_heading(self):
        assert deflection_deg((1, 0), (2, 0)) == 0.0

    def test_right_angle(self):
        assert deflection_deg((1, 0), (0, 3)) == pytest.approx(90.0)

    def test_reversal(self):
        assert deflection_deg((1, 0), (-1, 0)) == pytest.approx(180.0)


class TestFindJoinable:
    def ending_and_begin(self, gap=7, deflect_deg=0.0, offset_y=0.0):
        a, b = split_track(1, 2, gap=gap)
        frags = build_fragments([a, b])
        ending = frags[1]
        begin = frags[2]
        if deflect_deg or offset_y:
            rad = math.radians(deflect_deg)
            poly = begin.polyline.copy()
            heading = poly[1] - poly[0]
            rot = np.array([[math.cos(rad), -math.sin(rad)], [math.sin(rad), math.cos(rad)]])
            poly[1] = poly[0] + rot @ heading
            anchor = begin.anchor
            if offset_y:
                anchor = bev_det(begin.frame, anchor.center.x, anchor.center.y + offset_y)
            begin = Fragment("b", begin.track_id, begin.frame, anchor, poly,
                             begin.velocity, begin.direction)
        return ending, begin

    def test_straight_split_yields_candidate(self):
        ending, begin = self.ending_and_begin(gap=int(0.5 * FPS))
        cands = find_joinable(ending, [begin], FPS)
        assert len(cands) == 1
        assert cands[0].deflection == pytest.approx(0.0, abs=1e-9)

    def test_large_deflection_rejected(self):
        ending, begin = self.ending_and_begin(deflect_deg=91.0)
        assert find_joinable(ending, [begin], FPS) == []

    def test_too_far_ahead_rejected(self):
        ending, begin = self.ending_and_begin(gap=2 * FPS)
        assert find_joinable(ending, [begin], FPS) == []

    def test_direction_mismatch_rejected(self):
        a, _ = split_track(1, 2)
        rev = make_track(3, [(46 + k, 300.0 - 5.0 * k, 50.0) for k in range(40)])
        frags = build_fragments([a, rev])
        assert find_joinable(frags[1], [frags[2]], FPS) == []

    def test_outside_swept_box_rejected(self):
        ending, begin = self.ending_and_begin(offset_y=80.0)
        assert find_joinable(ending, [begin], FPS) == []


class FakeFlow:
    def __init__(self, per_frame):
        self.per_frame = per_frame

    def cumulative_displacement(self, ending, max_frames):
        if self.per_frame is None:
            return None
        return [(self.per_frame[0] * k, self.per_frame[1] * k) for k in range(1, max_frames + 1)]


class TestCandidateSelect:
    RES = (480.0, 360.0)  # diagonal 600 -> threshold 12 px at the 0.02 default

    def test_kinematic_fallback_selects_true_continuation(self):
        a, b = split_track(1, 2, gap=5)
        frags = build_fragments([a, b])
        cands = find_joinable(frags[1], [frags[2]], FPS)
        best = candidate_select(frags[1], cands, None, (320.0, 240.0))
        assert best is not None and best.begin_fragment.track_id == 2

    def test_nearest_within_threshold_wins(self):
        a, b = split_track(1, 2, gap=5)
        frags = build_fragments([a, b])
        true_cand = find_joinable(frags[1], [frags[2]], FPS)[0]
        far_begin = Fragment(
            "b", 3, frags[2].frame,
            bev_det(frags[2].frame, frags[2].anchor.center.x + 37.0, frags[2].anchor.center.y),
            frags[2].polyline + np.array([37.0, 0.0]), frags[2].velocity, frags[2].direction,
        )
        far_cand = JoinCandidate(frags[1], far_begin, 0.0, 37.0)
        best = candidate_select(frags[1], [far_cand, true_cand], None, self.RES)
        assert best is true_cand

    def test_all_beyond_threshold(self):
        # continuation displaced 6 px off the predicted path, threshold 1 px
        a, b = split_track(1, 2, gap=5)
        frags = build_fragments([a, b])
        off = frags[2]
        shifted = Fragment(
            "b", off.track_id, off.frame,
            bev_det(off.frame, off.anchor.center.x, off.anchor.center.y + 6.0),
            off.polyline + np.array([0.0, 6.0]), off.velocity, off.direction,
        )
        cands = find_joinable(frags[1], [shifted], FPS)
        assert cands
        assert candidate_select(frags[1], cands, None, (30.0, 40.0)) is None

    def test_flow_prediction_overrides_kinematics(self):
        a, b = split_track(1, 2, gap=5)
        frags = build_fragments([a, b])
        cands = find_joinable(frags[1], [frags[2]], FPS)
        # flow reports the true 5 px/frame motion; selection still lands on the begin
        best = candidate_select(frags[1], cands, FakeFlow((5.0, 0.0)), self.RES)
        assert best is not None
        # flow reporting wildly wrong motion pushes the prediction off every candidate
        none = candidate_select(frags[1], cands, FakeFlow((-50.0, 0.0)), self.RES)
        assert none is None

    def test_empty(self):
        a, b = split_track(1, 2)
        frags = build_fragments([a, b])
        assert candidate_select(frags[1], [], None, self.RES) is None


class TestJoinTracks:
    def test_split_track_rejoined_under_first_id(self):
        a, b = split_track(4, 9, gap=9)
        out = join_tracks([a, b], FPS)
        assert [t.id for t in out] == [4]
        frames = [e.frame for e in out[0].entries]
        assert frames == sorted(frames)
        assert len(out[0].entries) == len(a.entries) + len(b.entries)

    def test_opposite_directions_never_join(self):
        fwd = make_track(1, [(k, 5.0 * k, 50.0) for k in range(40)])
        back = make_track(2, [(45 + k, 250.0 - 5.0 * k, 50.0) for k in range(40)])
        out = join_tracks([fwd, back], FPS)
        assert [t.id for t in out] == [1, 2]

    def test_idempotence(self):
        a, b = split_track(1, 2, gap=6)
        c = make_track(7, [(k, 5.0 * k, 150.0) for k in range(40)])
        once = join_tracks([a, b, c], FPS)
        twice = join_tracks(once, FPS)
        assert [(t.id, len(t.entries)) for t in once] == [(t.id, len(t.entries)) for t in twice]

    def test_transitive_three_way_chain(self):
        n, gap, step = 30, 6, 5.0
        a = make_track(1, [(k, step * k, 50.0) for k in range(n)])
        s1 = n + gap - 1
        b = make_track(2, [(s1 + k, step * (s1 + k), 50.0) for k in range(n)])
        s2 = s1 + n + gap - 1
        c = make_track(3, [(s2 + k, step * (s2 + k), 50.0) for k in range(n)])
        out = join_tracks([a, b, c], FPS, StitchConfig(resolution=(640.0, 480.0)))
        assert [t.id for t in out] == [1]
        assert len(out[0].entries) == 3 * n

    def test_states_preserved_exactly(self):
        a, b = split_track(1, 2)
        c = make_track(3, [(k, 400.0 - 5.0 * k, 150.0) for k in range(40)])
        tracks = [a, b, c]
        before = sorted((e.frame, e.detection.center) for t in tracks for e in t.entries)
        out = join_tracks(tracks, FPS)
        after = sorted((e.frame, e.detection.center) for t in out for e in t.entries)
        assert before == after
        assert len(out) <= len(tracks)

    def test_short_tracks_pass_through(self):
        short = make_track(5, [(0, 1.0, 2.0)])
        out = join_tracks([short], FPS)
        assert [t.id for t in out] == [5]

    def test_no_join_spans_more_than_fps(self):
        a, b = split_track(1, 2, gap=FPS + 3)
        out = join_tracks([a, b], FPS)
        assert [t.id for t in out] == [1, 2]

    def test_begin_consumed_at_most_once(self):
        # two enders racing for one continuation: only one merge happens
        a = make_track(1, [(k, 5.0 * k, 50.0) for k in range(40)])
        a2 = make_track(2, [(k, 5.0 * k, 52.0) for k in range(40)])
        start = 45
        cont = make_track(3, [(start + k, 5.0 * (start + k), 51.0) for k in range(40)])
        out = join_tracks([a, a2, cont], FPS)
        assert len(out) == 2
        merged = [t for t in out if len(t.entries) == 80]
        assert len(merged) == 1
