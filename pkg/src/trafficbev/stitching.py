"""Reconnect fragmented tracks via spatio-temporal neighbours.

Occlusion and missed detections split one vehicle into several short tracks.
Every finished track contributes a begin ('b') and an end ('e') fragment; for
each ending track, a joinable continuation must

1. begin within one second (fps frames) after the ending frame,
2. start inside the ending box grown along the estimated motion, with the
   same direction label, and
3. deflect at most a configured angle from the ending heading.

Among the survivors, the one whose begin lies nearest a forward prediction of
the vehicle wins (predicted by feature flow when pixel frames are available,
by the terminal Kalman velocity otherwise) and the fragments merge under the
earlier track id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .analytics import direction_from_displacement
from .tracking import BevDetection, Track


@dataclass(frozen=True)
class Fragment:
    kind: str  # 'b' for begin, 'e' for end
    track_id: int
    frame: int
    anchor: BevDetection  # first (b) or last (e) detection of the track
    polyline: np.ndarray  # piecewise-linear simplification of the whole track
    velocity: tuple  # Kalman (vx, vy) at the anchor, BEV px/frame
    direction: int  # 1 | 2 travel label, 0 when the track has no net motion


@dataclass(frozen=True)
class JoinCandidate:
    end_fragment: Fragment
    begin_fragment: Fragment
    deflection: float  # degrees in [0, 180]
    predicted_gap: float  # BEV px between kinematic prediction and the begin

    def __post_init__(self):
        if self.begin_fragment.frame <= self.end_fragment.frame:
            raise ValueError("begin fragment must start after the end fragment")


@dataclass(frozen=True)
class StitchConfig:
    max_deflection_deg: float = 30.0
    dist_fraction: float = 0.02  # of the image diagonal
    dp_epsilon: float = 1.0  # polyline simplification tolerance, BEV px
    resolution: tuple = (320.0, 240.0)  # image size the distance threshold scales with


class FlowPredictor(Protocol):
    def cumulative_displacement(self, ending: Fragment, max_frames: int) -> Optional[list]:
        """BEV displacement accumulated 1..max_frames past the ending frame,
        or None when no usable feature points exist."""


def douglas_peucker(points: np.ndarray, epsilon: float) -> np.ndarray:
    """Classic recursive polyline simplification with tolerance epsilon."""
    pts = np.asarray(points, dtype=float)
    if len(pts) <= 2:
        return pts.copy()
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        seg = pts[hi] - pts[lo]
        norm = math.hypot(*seg)
        mid = pts[lo + 1 : hi]
        if norm == 0.0:
            dist = np.hypot(*(mid - pts[lo]).T)
        else:
            rel = mid - pts[lo]
            dist = np.abs(seg[0] * rel[:, 1] - seg[1] * rel[:, 0]) / norm
        worst = int(np.argmax(dist))
        if dist[worst] > epsilon:
            idx = lo + 1 + worst
            keep[idx] = True
            stack.append((lo, idx))
            stack.append((idx, hi))
    return pts[keep]


def _track_direction(track: Track) -> int:
    start = track.entries[0].detection.center
    end = track.entries[-1].detection.center
    dx, dy = end.x - start.x, end.y - start.y
    if dx == 0.0 and dy == 0.0:
        return 0
    return direction_from_displacement(dx, dy)[0]


def build_fragments(tracks: Sequence[Track], epsilon: float = 1.0) -> list[Fragment]:
    """One begin and one end fragment per track with at least two states."""
    fragments = []
    for t in tracks:
        if len(t.entries) < 2:
            continue
        pts = np.array([(e.detection.center.x, e.detection.center.y) for e in t.entries])
        poly = douglas_peucker(pts, epsilon)
        direction = _track_direction(t)
        first, last = t.entries[0], t.entries[-1]
        fragments.append(
            Fragment("b", t.id, first.frame, first.detection, poly,
                     (float(first.state.mean[2]), float(first.state.mean[3])), direction)
        )
        fragments.append(
            Fragment("e", t.id, last.frame, last.detection, poly,
                     (float(last.state.mean[2]), float(last.state.mean[3])), direction)
        )
    return fragments


def deflection_deg(u, v) -> float:
    """Angle between two heading vectors, degrees in [0, 180]."""
    nu, nv = math.hypot(*u), math.hypot(*v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    cosang = (u[0] * v[0] + u[1] * v[1]) / (nu * nv)
    return math.degrees(math.acos(max(-1.0, min(1.0, cosang))))


def _final_heading(poly: np.ndarray):
    return poly[-1] - poly[-2]


def _initial_heading(poly: np.ndarray):
    return poly[1] - poly[0]


def _swept_bbox(ending: Fragment, gap: int):
    """End-anchor box grown along the terminal motion over the gap, padded by
    half a box; the raw last-frame box rarely contains a vehicle a second
    downstream at highway speed."""
    x, y, w, h = ending.anchor.bbox
    sx, sy = ending.velocity[0] * gap, ending.velocity[1] * gap
    x0 = min(x, x + sx) - w / 2.0
    y0 = min(y, y + sy) - h / 2.0
    x1 = max(x + w, x + w + sx) + w / 2.0
    y1 = max(y + h, y + h + sy) + h / 2.0
    return x0, y0, x1, y1


def find_joinable(
    ending: Fragment,
    all_begins: Sequence[Fragment],
    fps: float,
    max_deflection: float = 30.0,
) -> list[JoinCandidate]:
    """Temporal, spatial+direction, then deflection filters, in that order."""
    if ending.kind != "e":
        raise ValueError("ending fragment must have kind 'e'")
    out = []
    ex, ey = ending.anchor.center
    for b in all_begins:
        if b.kind != "b":
            raise ValueError("all_begins must have kind 'b'")
        gap = b.frame - ending.frame
        if not 0 < gap <= fps:
            continue
        x0, y0, x1, y1 = _swept_bbox(ending, gap)
        bx, by = b.anchor.center
        if not (x0 <= bx <= x1 and y0 <= by <= y1):
            continue
        if ending.direction == 0 or b.direction != ending.direction:
            continue
        defl = deflection_deg(_final_heading(ending.polyline), _initial_heading(b.polyline))
        if defl > max_deflection:
            continue
        pred = (ex + ending.velocity[0] * gap, ey + ending.velocity[1] * gap)
        out.append(JoinCandidate(ending, b, defl, math.hypot(pred[0] - bx, pred[1] - by)))
    return out


def candidate_select(
    ending: Fragment,
    candidates: Sequence[JoinCandidate],
    flow: Optional[FlowPredictor],
    resolution,
    dist_fraction: float = 0.02,
) -> Optional[JoinCandidate]:
    """Pick the candidate whose begin lies nearest the forward prediction.

    The acceptance threshold scales with the image resolution; ties break on
    the smaller temporal gap, then the smaller deflection.
    """
    if not candidates:
        return None
    thresh = dist_fraction * math.hypot(resolution[0], resolution[1])
    max_gap = max(c.begin_fragment.frame - c.end_fragment.frame for c in candidates)
    cum = flow.cumulative_displacement(ending, max_gap) if flow is not None else None

    ex, ey = ending.anchor.center
    scored = []
    for cand in candidates:
        gap = cand.begin_fragment.frame - cand.end_fragment.frame
        if cum is not None and len(cum) >= gap:
            disp = cum[gap - 1]
        else:
            disp = (ending.velocity[0] * gap, ending.velocity[1] * gap)
        bx, by = cand.begin_fragment.anchor.center
        dist = math.hypot(ex + disp[0] - bx, ey + disp[1] - by)
        if dist <= thresh:
            scored.append((dist, gap, cand.deflection, cand))
    if not scored:
        return None
    return min(scored, key=lambda s: s[:3])[3]


def join_tracks(
    tracks: Sequence[Track],
    fps: float,
    cfg: StitchConfig = StitchConfig(),
    flow: Optional[FlowPredictor] = None,
) -> list[Track]:
    """Transitive closure of accepted joins over one scene's finished tracks.

    Merged tracks keep the earlier id and simply concatenate states (gap
    frames stay absent, they are not interpolated).  Each begin fragment is
    consumed at most once.  Tracks too short to fragment pass through
    untouched.
    """
    fragments = build_fragments(tracks, cfg.dp_epsilon)
    begins = [f for f in fragments if f.kind == "b"]
    ends = sorted((f for f in fragments if f.kind == "e"), key=lambda f: (f.frame, f.track_id))

    consumed: set[int] = set()
    next_of: dict[int, int] = {}
    for e in ends:
        open_begins = [b for b in begins if b.track_id not in consumed and b.track_id != e.track_id]
        cands = find_joinable(e, open_begins, fps, cfg.max_deflection_deg)
        best = candidate_select(e, cands, flow, cfg.resolution, cfg.dist_fraction)
        if best is not None:
            next_of[e.track_id] = best.begin_fragment.track_id
            consumed.add(best.begin_fragment.track_id)

    by_id = {t.id: t for t in tracks}
    out = []
    for t in tracks:
        if t.id in consumed:
            continue  # absorbed into an earlier track
        chain = [t.id]
        while chain[-1] in next_of:
            chain.append(next_of[chain[-1]])
        if len(chain) == 1:
            out.append(t)
        else:
            entries = [e for tid in chain for e in by_id[tid].entries]
            out.append(Track.from_entries(t.id, entries))
    return sorted(out, key=lambda t: t.id)
