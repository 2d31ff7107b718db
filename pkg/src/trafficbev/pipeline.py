"""Three-stage pipeline: BEV projection + tracking, stitching, analytics.

Deterministic composition over one scene: detection centers are warped
through the scene homography, boxed with class-canonical BEV sizes, tracked
frame by frame, stitched, calibrated from observed car boxes, and reduced to
vehicle records and a scene summary.  Frames advance strictly in order;
separate scenes can run in parallel as independent instances.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .analytics import SceneSummary, build_vehicle_records, error_rate, summarize
from .calibration import CalibrationModel, CalSample, fit_calibration
from .detections import DetectionStream
from .errors import EngineError, InsufficientSamplesError, PipelineStageError
from .feature_flow import FrameStore, harris_corners, lk_track
from .geometry import Homography, Point, apply_point, apply_points, invert, warp_box
from .scene import SceneConfig, scene_homography
from .stitching import Fragment, Track, join_tracks
from .tracking import BevDetection, BevSizeModel, KalmanState, TrackEntry, make_tracker

TRACKS_SCHEMA_VERSION = 1


@dataclass
class Diagnostics:
    frames_processed: int = 0
    detections_in: int = 0
    detections_outside_bev: int = 0
    tracks_finished: int = 0  # before stitching
    tracks_after_stitch: int = 0
    calibration_fallback: bool = False
    calibration_residuals: Optional[tuple] = None
    skipped_short_tracks: int = 0
    notes: list = field(default_factory=list)
    prestitch_tracks: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "frames_processed": self.frames_processed,
            "detections_in": self.detections_in,
            "detections_outside_bev": self.detections_outside_bev,
            "tracks_finished": self.tracks_finished,
            "tracks_after_stitch": self.tracks_after_stitch,
            "calibration_fallback": self.calibration_fallback,
            "calibration_residuals": list(self.calibration_residuals)
            if self.calibration_residuals
            else None,
            "skipped_short_tracks": self.skipped_short_tracks,
            "notes": self.notes,
        }


@dataclass
class PipelineResult:
    records: list
    summary: SceneSummary
    model: CalibrationModel
    diagnostics: Diagnostics
    tracks: list  # stitched tracks


class ImageFlowPredictor:
    """Feature-flow forward prediction for stitching candidate confirmation.

    Corners are extracted on the vehicle's image-plane box at its last seen
    frame and chained through the following frames; the median per-point
    displacement, warped to BEV, predicts where the vehicle went.
    """

    def __init__(self, store: FrameStore, homography: Homography, image_size,
                 max_points: int = 25):
        self.store = store
        self.h = homography
        self.h_inv = invert(homography)
        self.image_size = image_size
        self.max_points = max_points

    def _image_roi(self, ending: Fragment):
        x, y, w, h = ending.anchor.bbox
        bx, by, bw, bh = warp_box(self.h_inv, x, y, w, h)
        iw, ih = self.image_size
        x0 = max(bx, 2.0)
        y0 = max(by, 2.0)
        x1 = min(bx + bw, iw - 3.0)
        y1 = min(by + bh, ih - 3.0)
        if x1 - x0 < 3 or y1 - y0 < 3:
            return None
        return (x0, y0, x1 - x0, y1 - y0)

    def cumulative_displacement(self, ending: Fragment, max_frames: int):
        frame0 = ending.frame
        if frame0 not in self.store:
            return None
        roi = self._image_roi(ending)
        if roi is None:
            return None
        prev = self.store.get(frame0)
        pts = harris_corners(prev, roi=roi, max_points=self.max_points)
        if not pts:
            return None

        start = np.array([(p.pos.x, p.pos.y) for p in pts])
        current = start.copy()
        alive = np.ones(len(pts), dtype=bool)
        cum = []
        for k in range(1, max_frames + 1):
            if frame0 + k not in self.store:
                break
            nxt = self.store.get(frame0 + k)
            idx = np.nonzero(alive)[0]
            tracked = lk_track(prev, nxt, [Point(*current[i]) for i in idx])
            for slot, (pos, ok) in zip(idx, tracked):
                if ok:
                    current[slot] = pos
                else:
                    alive[slot] = False
            if not alive.any():
                break
            bev_disp = apply_points(self.h, current[alive]) - apply_points(self.h, start[alive])
            med = np.median(bev_disp, axis=0)
            cum.append((float(med[0]), float(med[1])))
            prev = nxt
        return cum or None


def _stage(name):
    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, EngineError) and not isinstance(exc, PipelineStageError):
                raise PipelineStageError(name, exc) from exc
            return False

    return _Guard()


def project_detections(cfg: SceneConfig, stream: DetectionStream):
    """Warp a detection stream to BEV with class-canonical boxes.

    Yields (frame, [BevDetection]) for every frame in the stream's range
    (empty frames included, so trackers can count misses), and collects
    calibration samples from the reference class along the way.
    """
    h = scene_homography(cfg)
    size_model = BevSizeModel(defaults=cfg.classes, warmup_count=cfg.size_warmup)
    bev_w, bev_h = cfg.bev_size

    by_frame = dict(stream.by_frame)
    cal_samples: list[CalSample] = []
    outside = 0
    if stream.min_frame is None:
        return h, [], cal_samples, outside

    frames = []
    for frame in range(stream.min_frame, stream.max_frame + 1):
        bev_dets = []
        for det in by_frame.get(frame, []):
            x, y, w, hh = det.bbox
            center = apply_point(h, Point(x + w / 2.0, y + hh / 2.0))
            if not (0.0 <= center.x <= bev_w and 0.0 <= center.y <= bev_h):
                outside += 1
                continue
            _, _, ow, oh = warp_box(h, x, y, w, hh)
            size_model.observe(det.cls, ow, oh)
            if det.cls == cfg.calibration.reference_class:
                cal_samples.append(CalSample(center, ow, oh, det.cls))
            cw, ch = size_model.box_for(det.cls)
            bev_dets.append(
                BevDetection(
                    frame, det.cls, center,
                    (center.x - cw / 2.0, center.y - ch / 2.0, cw, ch), det.score,
                )
            )
        frames.append((frame, bev_dets))
    return h, frames, cal_samples, outside


def run_pipeline(
    cfg: SceneConfig,
    stream: DetectionStream,
    flow=None,
) -> PipelineResult:
    """Full deterministic run over one scene's detection stream."""
    diag = Diagnostics(detections_in=stream.n_detections)

    with _stage("projection"):
        h, frames, cal_samples, outside = project_detections(cfg, stream)
    diag.detections_outside_bev = outside
    diag.frames_processed = len(frames)

    with _stage("tracking"):
        tracker = make_tracker(cfg.tracker, cfg.motpy, cfg.byte, cfg.kalman)
        for frame, dets in frames:
            tracker.step(frame, dets)
        tracker.flush()
        finished = sorted(tracker.finished, key=lambda t: t.id)
    diag.tracks_finished = len(finished)
    diag.prestitch_tracks = finished

    with _stage("stitching"):
        if flow is None and cfg.frames_dir:
            store = FrameStore(cfg.frames_dir)
            if store.available:
                flow = ImageFlowPredictor(store, h, cfg.image_size)
        stitched = join_tracks(finished, cfg.fps, cfg.stitching, flow)
    diag.tracks_after_stitch = len(stitched)

    with _stage("calibration"):
        try:
            model = fit_calibration(cal_samples, cfg.bev_size, cfg.calibration)
            diag.calibration_residuals = model.residuals
        except InsufficientSamplesError as exc:
            model = CalibrationModel.constant(
                cfg.bev_size, cfg.calibration.fallback_ft_per_px, cfg.calibration
            )
            diag.calibration_fallback = True
            diag.notes.append(f"calibration fallback to constant scale: {exc}")

    with _stage("analytics"):
        records, lanes, skipped = build_vehicle_records(stitched, model, cfg.fps, cfg.analytics)
        summary = summarize(records, cfg.fps, cfg.analytics.min_speed_mph)
    diag.skipped_short_tracks = skipped

    return PipelineResult(records, summary, model, diag, stitched)


# ---------------------------------------------------------------------------
# Track and result serialisation


def tracks_to_dict(tracks, cfg: SceneConfig) -> dict:
    return {
        "schema_version": TRACKS_SCHEMA_VERSION,
        "fps": cfg.fps,
        "image_size": list(cfg.image_size),
        "bev_size": list(cfg.bev_size),
        "tracker": cfg.tracker,
        "tracks": [
            {
                "id": t.id,
                "cls": t.cls,
                "max_score": t.max_score,
                "entries": [
                    {
                        "frame": e.frame,
                        "cls": e.detection.cls,
                        "center": [e.detection.center.x, e.detection.center.y],
                        "bbox": list(e.detection.bbox),
                        "score": e.detection.score,
                        "stage": e.stage,
                        "velocity": [float(e.state.mean[2]), float(e.state.mean[3])],
                    }
                    for e in t.entries
                ],
            }
            for t in tracks
        ],
    }


def tracks_from_dict(doc: dict):
    if doc.get("schema_version") != TRACKS_SCHEMA_VERSION:
        raise ValueError(f"unsupported tracks schema_version: {doc.get('schema_version')!r}")
    tracks = []
    for tdoc in doc["tracks"]:
        entries = []
        for e in tdoc["entries"]:
            center = Point(*e["center"])
            det = BevDetection(e["frame"], e["cls"], center, tuple(e["bbox"]), e["score"])
            mean = np.array([center.x, center.y, e["velocity"][0], e["velocity"][1]])
            state = KalmanState(mean, np.eye(4))
            entries.append(TrackEntry(e["frame"], state, det, e["stage"]))
        tracks.append(Track.from_entries(tdoc["id"], entries))
    return tracks, float(doc["fps"]), tuple(doc["image_size"]), tuple(doc["bev_size"])


def save_tracks(tracks, cfg: SceneConfig, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(tracks_to_dict(tracks, cfg), f, sort_keys=True)
        f.write("\n")


def load_tracks(path):
    with open(path, "r", encoding="utf-8") as f:
        return tracks_from_dict(json.load(f))


# ---------------------------------------------------------------------------
# Output files


def _histogram_rows(values, bin_width, origin=0.0):
    if len(values) == 0:
        return []
    lo = math.floor((min(values) - origin) / bin_width) * bin_width + origin
    n = int(math.floor((max(values) - lo) / bin_width)) + 1
    counts = [0] * n
    for v in values:
        counts[min(int((v - lo) / bin_width), n - 1)] += 1
    return [(lo + i * bin_width, lo + (i + 1) * bin_width, c) for i, c in enumerate(counts)]


def _write_hist(path, rows, label):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"{label}_bin_lo", f"{label}_bin_hi", "count"])
        for lo, hi, count in rows:
            writer.writerow([f"{lo:.4f}", f"{hi:.4f}", count])


def summary_to_dict(summary: SceneSummary, real_counts: Optional[dict] = None) -> dict:
    doc = {
        "schema_version": 1,
        "duration_s": round(summary.duration_s, 3),
        "vehicle_total": summary.vehicle_total,
        "excluded_stopped": summary.excluded_stopped,
        "counts": [
            {"direction": d, "class": cls, "lane": lane, "count": n}
            for (d, cls, lane), n in sorted(summary.counts.items())
        ],
        "space_mean_speed_mph": {
            str(d): round(v, 3) for d, v in summary.space_mean_speed_mph.items()
        },
    }
    if real_counts is not None:
        by_dir_cls: dict = {}
        for (d, cls, _), n in summary.counts.items():
            by_dir_cls[(d, cls)] = by_dir_cls.get((d, cls), 0) + n
        rows = []
        for d_str in sorted(real_counts):
            for cls in sorted(real_counts[d_str]):
                real = int(real_counts[d_str][cls])
                est = by_dir_cls.get((int(d_str), cls), 0)
                rows.append(
                    {
                        "direction": int(d_str),
                        "class": cls,
                        "estimated": est,
                        "real": real,
                        "er_pct": error_rate(est, real),
                    }
                )
        doc["error_rates"] = rows
    return doc


def write_outputs(
    records,
    summary: SceneSummary,
    model: CalibrationModel,
    out_dir,
    diagnostics: Optional[Diagnostics] = None,
    real_counts: Optional[dict] = None,
    figures: bool = True,
) -> list[str]:
    """vehicles.csv, summary.json, calibration.json, histogram tables, and
    (by default) rendered figures.  Output is byte-stable across re-runs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    vehicles_path = out / "vehicles.csv"
    with open(vehicles_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["id", "class", "direction", "lane", "first_frame", "last_frame",
             "mean_speed_mph", "mean_accel_ms2"]
        )
        for r in sorted(records, key=lambda r: r.id):
            writer.writerow(
                [
                    r.id, r.cls, r.direction, r.lane, r.first_frame, r.last_frame,
                    f"{r.mean_speed_mph:.2f}",
                    "" if r.mean_accel_ms2 is None else f"{r.mean_accel_ms2:.4f}",
                ]
            )
    written.append(str(vehicles_path))

    summary_path = out / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary_to_dict(summary, real_counts), f, indent=2, sort_keys=True)
        f.write("\n")
    written.append(str(summary_path))

    cal_path = out / "calibration.json"
    model.save(cal_path)
    written.append(str(cal_path))

    speeds = [v for r in records for _, v in r.speed_series]
    accels = [a for r in records for _, a in r.accel_series]
    speed_rows = _histogram_rows(speeds, bin_width=2.0)
    accel_rows = _histogram_rows(accels, bin_width=0.02)
    _write_hist(out / "speed_hist.csv", speed_rows, "mph")
    _write_hist(out / "accel_hist.csv", accel_rows, "ms2")
    written += [str(out / "speed_hist.csv"), str(out / "accel_hist.csv")]

    if diagnostics is not None:
        diag_path = out / "diagnostics.json"
        with open(diag_path, "w", encoding="utf-8") as f:
            json.dump(diagnostics.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        written.append(str(diag_path))

    if figures:
        from . import report

        written += report.render_figures(out, speed_rows, accel_rows, model, records)
    return written
