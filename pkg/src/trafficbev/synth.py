"""Synthetic scene generator: detection streams with known ground truth.

Vehicles run straight lanes in the BEV plane at sampled speeds, are projected
into image coordinates through the inverse scene homography, and boxed with
perspective-consistent sizes (the car box width follows the calibration width
line, so fitting on the generated boxes recovers the generator's scale
field).  Dropout windows, score dips, and position noise are reproducible
from the seed.  Direction 1 travels +x (away from the camera), direction 2
travels -x.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .detections import DetectionStream
from .geometry import Correspondence, Point, apply_point, invert, warp_box
from .scene import SceneConfig, scene_homography
from .tracking import Detection

FT_PER_MILE = 5280.0
S_PER_HOUR = 3600.0

# vehicle footprints in feet: (along-road length, cross-road width)
CLASS_DIMS_FT = {
    "motorcycle": (7.0, 3.0),
    "car": (14.7, 6.0),
    "bus": (40.0, 8.5),
    "single_unit": (25.0, 8.0),
    "trailer": (50.0, 8.5),
    "multi_trailer": (70.0, 8.5),
}

DEFAULT_QUAD = [(40.0, 230.0), (280.0, 230.0), (200.0, 70.0), (120.0, 70.0)]
RECTANGLE_QUAD = [(40.0, 230.0), (280.0, 230.0), (280.0, 70.0), (40.0, 70.0)]


@dataclass(frozen=True)
class SynthSpec:
    counts: dict  # {"1": {"car": 50}, "2": {"car": 50}}
    duration_s: float = 60.0
    speed_mph_mean: float = 60.0
    speed_mph_sd: float = 0.0
    lanes_per_direction: int = 2
    lane_width_px: float = 24.0
    base_score: float = 0.9
    noise_sd_px: float = 0.0
    dropout_frames: int = 0
    dropout_fraction: float = 0.0
    dip_frames: int = 0
    dip_fraction: float = 0.0
    dip_score: float = 0.3
    ft_per_px: float = 0.5
    width_slope: float = 0.0  # linear growth of the car BEV width along x
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        return cls(**doc)


@dataclass
class TruthVehicle:
    id: int
    cls: str
    direction: int
    lane_y: float
    speed_mph: float
    spawn_frame: int
    frames: list = field(default_factory=list)
    centers_bev: list = field(default_factory=list)  # pre-noise truth
    dropped: list = field(default_factory=list)


@dataclass
class GroundTruth:
    vehicles: list
    ft_per_px: float
    width_line: tuple  # (base px, slope) of the car BEV width field

    def counts(self) -> dict:
        out: dict = {}
        for v in self.vehicles:
            out.setdefault(str(v.direction), {}).setdefault(v.cls, 0)
            out[str(v.direction)][v.cls] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "counts": self.counts(),
            "ft_per_px": self.ft_per_px,
            "width_line": list(self.width_line),
            "vehicles": [asdict(v) for v in self.vehicles],
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def default_scene_config(tracker: str = "byte", rectangle: bool = False, **overrides) -> SceneConfig:
    """A 320x240 @ 15 fps camera looking down a straight road.

    With rectangle=True the ROI is a plain rectangle (camera straight above
    the road): the view-to-BEV map is then affine and axis-aligned boxes
    survive the warp exactly, which keeps calibration fixtures noiseless.
    """
    quad = RECTANGLE_QUAD if rectangle else DEFAULT_QUAD
    bev = overrides.pop("bev_size", (800.0, 200.0))
    w, h = bev
    dst = [Point(0.0, 0.0), Point(0.0, h), Point(w, h), Point(w, 0.0)]
    pairs = [Correspondence(Point(*s), d) for s, d in zip(quad, dst)]
    return SceneConfig(
        image_size=overrides.pop("image_size", (320, 240)),
        fps=overrides.pop("fps", 15.0),
        bev_size=bev,
        correspondences=pairs,
        tracker=tracker,
        **overrides,
    )


def _lane_centers(spec: SynthSpec, bev_h: float) -> dict:
    n, w = spec.lanes_per_direction, spec.lane_width_px
    mid = bev_h / 2.0
    margin = w / 2.0 + 4.0
    lanes1 = [mid - margin - w * k for k in range(n)]  # direction 1 on the low-y side
    lanes2 = [mid + margin + w * k for k in range(n)]
    return {1: sorted(lanes1), 2: sorted(lanes2)}


def gen_synthetic_scene(
    spec: SynthSpec, cfg: Optional[SceneConfig] = None
) -> tuple[DetectionStream, GroundTruth, SceneConfig]:
    """Deterministic detection stream plus per-vehicle ground truth."""
    if cfg is None:
        cfg = default_scene_config()
    rng = np.random.default_rng(spec.seed)
    h_inv = invert(scene_homography(cfg))

    bev_w, bev_h = cfg.bev_size
    n_frames = int(round(spec.duration_s * cfg.fps))
    lanes = _lane_centers(spec, bev_h)
    base_w = CLASS_DIMS_FT["car"][0] / spec.ft_per_px

    def local_scale(x: float) -> float:
        # ft per BEV px implied by the car width line at x
        return CLASS_DIMS_FT["car"][0] / (base_w + spec.width_slope * x)

    vehicles: list[TruthVehicle] = []
    vid = 0
    for direction in sorted(spec.counts):
        for cls in sorted(spec.counts[direction]):
            for _ in range(int(spec.counts[direction][cls])):
                vid += 1
                speed = spec.speed_mph_mean
                if spec.speed_mph_sd > 0:
                    speed = float(rng.normal(spec.speed_mph_mean, spec.speed_mph_sd))
                speed = max(speed, 5.0)
                lane_y = float(rng.choice(lanes[int(direction)]))
                step = speed * FT_PER_MILE / S_PER_HOUR / cfg.fps / spec.ft_per_px
                transit = int(math.ceil((bev_w - 12.0) / step))
                latest = max(n_frames - transit - 2, 1)
                spawn = int(rng.integers(0, latest))
                vehicles.append(TruthVehicle(vid, cls, int(direction), lane_y, speed, spawn))

    # same-lane headway so inter-vehicle BEV IOU stays zero
    by_lane: dict = {}
    for v in vehicles:
        by_lane.setdefault((v.direction, v.lane_y), []).append(v)
    for group in by_lane.values():
        group.sort(key=lambda v: (v.spawn_frame, v.id))
        for prev, cur in zip(group, group[1:]):
            length_px = CLASS_DIMS_FT[prev.cls][0] / spec.ft_per_px
            step = prev.speed_mph * FT_PER_MILE / S_PER_HOUR / cfg.fps / spec.ft_per_px
            headway = int(math.ceil(3.0 * length_px / step)) + 1
            cur.spawn_frame = max(cur.spawn_frame, prev.spawn_frame + headway)

    # dropout / score-dip windows
    dropout_of: dict = {}
    dip_of: dict = {}
    for v in vehicles:
        if spec.dropout_frames > 0 and rng.random() < spec.dropout_fraction:
            dropout_of[v.id] = float(rng.uniform(0.3, 0.6))
        if spec.dip_frames > 0 and rng.random() < spec.dip_fraction:
            dip_of[v.id] = float(rng.uniform(0.3, 0.6))

    frames: dict[int, list] = {}
    for v in vehicles:
        sign = 1.0 if v.direction == 1 else -1.0
        x = 6.0 if v.direction == 1 else bev_w - 6.0
        v_ft_frame = v.speed_mph * FT_PER_MILE / S_PER_HOUR / cfg.fps
        positions = []
        frame = v.spawn_frame
        while 5.0 <= x <= bev_w - 5.0 and frame < n_frames:
            positions.append((frame, x))
            x += sign * v_ft_frame / local_scale(x)
            frame += 1
        if len(positions) < 2:
            continue
        drop_window = ()
        if v.id in dropout_of:
            start = positions[0][0] + int(dropout_of[v.id] * len(positions))
            drop_window = range(start, start + spec.dropout_frames)
        dip_window = ()
        if v.id in dip_of:
            start = positions[0][0] + int(dip_of[v.id] * len(positions))
            dip_window = range(start, start + spec.dip_frames)

        dims = CLASS_DIMS_FT[v.cls]
        for frame, x in positions:
            v.frames.append(frame)
            v.centers_bev.append((x, v.lane_y))
            if frame in drop_window:
                v.dropped.append(frame)
                continue
            s = local_scale(x)
            box_len = dims[0] / s
            box_wid = dims[1] / spec.ft_per_px
            # box size from the warped footprint, box center on the projected
            # center, so warping the detected center recovers the truth exactly
            _, _, bw, bh = warp_box(
                h_inv, x - box_len / 2.0, v.lane_y - box_wid / 2.0, box_len, box_wid
            )
            center_img = apply_point(h_inv, Point(x, v.lane_y))
            bx = center_img.x - bw / 2.0
            by = center_img.y - bh / 2.0
            if spec.noise_sd_px > 0:
                bx += float(rng.normal(0, spec.noise_sd_px))
                by += float(rng.normal(0, spec.noise_sd_px))
            score = spec.dip_score if frame in dip_window else spec.base_score
            frames.setdefault(frame, []).append(
                Detection(frame, v.cls, (bx, by, bw, bh), score)
            )

    stream = DetectionStream(
        by_frame=[(frame, frames[frame]) for frame in sorted(frames)]
    )
    truth = GroundTruth(
        vehicles=[v for v in vehicles if v.frames],
        ft_per_px=spec.ft_per_px,
        width_line=(base_w, spec.width_slope),
    )
    return stream, truth, cfg


def match_tracks_to_truth(tracks: list, truth: GroundTruth, cfg: SceneConfig, tol: float = 2.0) -> dict:
    """Map each track id to the set of truth vehicle ids its detections hit.

    Detections are matched by BEV position at their frame; with zero noise the
    warp round-trip keeps positions within numerical epsilon of the truth.
    """
    h = scene_homography(cfg)
    by_frame: dict[int, list] = {}
    for v in truth.vehicles:
        for frame, (x, y) in zip(v.frames, v.centers_bev):
            by_frame.setdefault(frame, []).append((x, y, v.id))

    assignment: dict[int, set] = {}
    for t in tracks:
        hits = set()
        for e in t.entries:
            cands = by_frame.get(e.frame, [])
            best, best_d = None, tol
            for x, y, vid in cands:
                d = math.hypot(e.detection.center.x - x, e.detection.center.y - y)
                if d <= best_d:
                    best, best_d = vid, d
            if best is not None:
                hits.add(best)
        assignment[t.id] = hits
    return assignment


def id_switches(assignment: dict) -> int:
    """Tracks whose detections span more than one ground-truth vehicle."""
    return sum(1 for hits in assignment.values() if len(hits) > 1)


def fragmentation(assignment: dict) -> dict:
    """vehicle id -> number of tracks containing it."""
    out: dict = {}
    for hits in assignment.values():
        for vid in hits:
            out[vid] = out.get(vid, 0) + 1
    return out
