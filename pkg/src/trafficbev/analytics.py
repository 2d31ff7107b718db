"""Traffic parameters from stitched BEV tracks.

Directions come from trajectory bearings, lanes from histogram peaks of the
cross-travel coordinate, speeds from calibrated per-frame displacements
(V = D / T with D the calibrated distance), accelerations from a centered
5-second speed difference, and segment speeds from the harmonic (space) mean.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from .calibration import CalibrationModel, calibrated_displacement
from .geometry import Point
from .errors import (
    NoLanesFoundError,
    TooShortTrackError,
    ZeroDenominatorError,
    ZeroSpeedError,
)
from .tracking import Track

MPH_PER_FTPS = 3600.0 / 5280.0
MS2_PER_MPH_PER_S = 0.44704


@dataclass(frozen=True)
class VehicleRecord:
    id: int
    cls: str
    direction: int  # 1 | 2
    lane: int  # 1-based, innermost first
    first_frame: int
    last_frame: int
    bearing_deg: float
    mean_speed_mph: float
    mean_accel_ms2: Optional[float]
    speed_series: list = field(default_factory=list)  # (time s, mph)
    accel_series: list = field(default_factory=list)  # (time s, m/s^2)


@dataclass(frozen=True)
class LaneModel:
    axis: int  # the cross-travel BEV axis: 0 = x, 1 = y
    centers: tuple  # strictly increasing cross-axis coordinates
    width: float  # median center spacing; 0 when only one lane found
    inner_side: str = "low"  # which end of `centers` is lane 1


@dataclass
class SceneSummary:
    counts: dict  # (direction, cls, lane) -> count
    space_mean_speed_mph: dict  # direction -> mph (absent if no movers)
    excluded_stopped: int
    duration_s: float
    vehicle_total: int


def direction_from_displacement(dx: float, dy: float) -> tuple[int, float]:
    """(direction label, bearing in degrees [0, 360) with 0 = +x)."""
    bearing = math.degrees(math.atan2(dy, dx)) % 360.0
    dominant = dx if abs(dx) >= abs(dy) else dy
    return (1 if dominant > 0 else 2), bearing


def direction_of(track: Track, min_displacement: float = 10.0) -> tuple[int, float]:
    """Direction label and bearing from the track's start and end coordinates."""
    start = track.entries[0].detection.center
    end = track.entries[-1].detection.center
    dx, dy = end.x - start.x, end.y - start.y
    if math.hypot(dx, dy) < min_displacement:
        raise TooShortTrackError(
            f"track {track.id} displacement {math.hypot(dx, dy):.2f} px < {min_displacement}"
        )
    return direction_from_displacement(dx, dy)


def travel_axis(tracks: Sequence[Track]) -> int:
    """Dominant BEV axis of travel over the given tracks (0 = x, 1 = y)."""
    span = np.zeros(2)
    for t in tracks:
        start = t.entries[0].detection.center
        end = t.entries[-1].detection.center
        span += (abs(end.x - start.x), abs(end.y - start.y))
    return int(np.argmax(span))


def detect_lanes(
    tracks: Sequence[Track],
    direction: int,
    bin_px: float = 2.0,
    smooth_bins: int = 5,
    prominence_frac: float = 0.2,
    min_separation: float = 12.0,
    min_displacement: float = 10.0,
    inner_side: str = "low",
) -> LaneModel:
    """Lane centers from a histogram of the cross-travel coordinate.

    All trajectory points of the direction's tracks are projected on the axis
    orthogonal to travel, binned, smoothed with a moving average, and the
    peaks (with a prominence floor and a minimum separation) become lane
    centers.
    """
    selected = []
    for t in tracks:
        try:
            d, _ = direction_of(t, min_displacement)
        except TooShortTrackError:
            continue
        if d == direction:
            selected.append(t)
    if not selected:
        raise NoLanesFoundError(f"no usable tracks in direction {direction}")

    cross = 1 - travel_axis(selected)
    coords = np.array(
        [e.detection.center[cross] for t in selected for e in t.entries], dtype=float
    )

    lo = np.floor(coords.min() / bin_px) * bin_px
    nbins = int(np.ceil((coords.max() - lo) / bin_px)) + 1
    hist, _ = np.histogram(coords, bins=nbins, range=(lo, lo + nbins * bin_px))
    pad = smooth_bins  # zero padding so bundles at the histogram edge still peak
    padded = np.concatenate([np.zeros(pad), hist.astype(float), np.zeros(pad)])
    smoothed = np.convolve(padded, np.ones(smooth_bins) / smooth_bins, mode="same")

    peaks, _ = find_peaks(
        smoothed,
        prominence=prominence_frac * smoothed.max(),
        distance=max(1, int(round(min_separation / bin_px))),
    )
    if len(peaks) == 0:
        raise NoLanesFoundError(f"no histogram peaks in direction {direction}")

    centers = tuple(sorted(lo + (p - pad + 0.5) * bin_px for p in peaks))
    width = float(np.median(np.diff(centers))) if len(centers) > 1 else 0.0
    return LaneModel(axis=cross, centers=centers, width=width, inner_side=inner_side)


def assign_lane(track: Track, lanes: LaneModel) -> int:
    """Nearest lane center to the track's median cross-axis coordinate (1-based)."""
    if not lanes.centers:
        raise ValueError("lane model has no centers")
    coords = [e.detection.center[lanes.axis] for e in track.entries]
    med = float(np.median(coords))
    idx = min(range(len(lanes.centers)), key=lambda i: (abs(lanes.centers[i] - med), i))
    if lanes.inner_side == "high":
        return len(lanes.centers) - idx
    return idx + 1


def _smooth_symmetric(times: np.ndarray, values: np.ndarray, half_window: float) -> np.ndarray:
    """Centered moving average whose window shrinks symmetrically at the ends.

    Symmetric shrinking keeps the smoother exact on linear series all the way
    to the boundary, which plain truncation does not.
    """
    out = np.empty_like(values)
    t0, t1 = times[0], times[-1]
    for i, t in enumerate(times):
        w = min(half_window, t - t0, t1 - t) + 1e-9
        sel = np.abs(times - t) <= w
        out[i] = values[sel].mean()
    return out


def kinematics_series(
    track: Track,
    cal: CalibrationModel,
    fps: float,
    smooth_window_s: float = 1.0,
    accel_window_s: float = 5.0,
) -> tuple[list, list]:
    """Speed (mph) and acceleration (m/s^2) series for one track.

    Each consecutive state pair gives a calibrated displacement D in feet and
    a speed sample V = D / T at the segment midpoint; samples are smoothed
    with a moving average before differencing.  Acceleration is the centered
    difference of the smoothed speed over ``accel_window_s`` and is only
    defined where that window fits inside the track.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    if len(track.entries) < 2:
        raise TooShortTrackError(f"track {track.id} too short for kinematics")

    times, speeds = [], []
    for prev, cur in zip(track.entries, track.entries[1:]):
        p0, p1 = prev.detection.center, cur.detection.center
        dt = (cur.frame - prev.frame) / fps
        mid = Point((p0.x + p1.x) / 2.0, (p0.y + p1.y) / 2.0)
        dx_ft, dy_ft = calibrated_displacement(cal, mid, p1.x - p0.x, p1.y - p0.y)
        dist_ft = math.hypot(dx_ft, dy_ft)
        times.append((prev.frame + cur.frame) / 2.0 / fps)
        speeds.append(dist_ft / dt * MPH_PER_FTPS)

    times = np.array(times)
    speeds = _smooth_symmetric(times, np.array(speeds), smooth_window_s / 2.0)
    speed_series = list(zip(times.tolist(), speeds.tolist()))

    accel_series = []
    half = accel_window_s / 2.0
    eps = 1e-9
    for t in times:
        if t - half >= times[0] - eps and t + half <= times[-1] + eps:
            v_plus = float(np.interp(t + half, times, speeds))
            v_minus = float(np.interp(t - half, times, speeds))
            accel_series.append((float(t), (v_plus - v_minus) / accel_window_s * MS2_PER_MPH_PER_S))
    return speed_series, accel_series


def space_mean_speed(speeds: Sequence[float], epsilon: float = 1e-9) -> float:
    """Harmonic mean of individual vehicle speeds over the segment.

    Computed in exact rational arithmetic with a single final rounding, so
    round speeds give round results (60 and 30 mph average to exactly 40).
    """
    if len(speeds) == 0:
        raise ValueError("no speeds")
    for v in speeds:
        if v <= epsilon:
            raise ZeroSpeedError(f"speed {v} <= {epsilon}; exclude stopped vehicles upstream")
    total = sum(1 / Fraction(float(v)) for v in speeds)
    return float(len(speeds) / total)


def directional_counts(records: Sequence[VehicleRecord]) -> dict:
    """Vehicle counts keyed by (direction, class, lane); each vehicle counts once."""
    return dict(Counter((r.direction, r.cls, r.lane) for r in records))


def error_rate(estimated: int, real: int) -> float:
    """Absolute percent error against a manual count, to 2 decimals (half-up)."""
    if real <= 0:
        raise ZeroDenominatorError("real count must be positive")
    pct = Decimal(100 * abs(estimated - real)) / Decimal(real)
    return float(pct.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class AnalyticsConfig:
    min_displacement_px: float = 10.0
    lane_bin_px: float = 2.0
    lane_smooth_bins: int = 5
    lane_prominence: float = 0.2
    min_lane_separation_px: float = 12.0
    smooth_window_s: float = 1.0
    accel_window_s: float = 5.0
    min_speed_mph: float = 1.0


def build_vehicle_records(
    tracks: Sequence[Track],
    cal: CalibrationModel,
    fps: float,
    cfg: AnalyticsConfig = AnalyticsConfig(),
) -> tuple[list[VehicleRecord], dict[int, LaneModel], int]:
    """Records for every track long enough to carry a direction.

    Returns (records, lane model per direction, number of skipped tracks).
    Lane 1 is the innermost lane: the one nearest the opposing direction's
    traffic (or the low-coordinate end when only one direction is present).
    """
    directed: dict[int, list[tuple[Track, float]]] = {}
    skipped = 0
    for t in tracks:
        try:
            d, bearing = direction_of(t, cfg.min_displacement_px)
        except TooShortTrackError:
            skipped += 1
            continue
        directed.setdefault(d, []).append((t, bearing))

    lanes_by_dir: dict[int, LaneModel] = {}
    mean_cross: dict[int, float] = {}
    for d, pairs in directed.items():
        tracks_d = [t for t, _ in pairs]
        cross = 1 - travel_axis(tracks_d)
        mean_cross[d] = float(
            np.mean([e.detection.center[cross] for t in tracks_d for e in t.entries])
        )
    for d, pairs in directed.items():
        other = [v for k, v in mean_cross.items() if k != d]
        inner = "high" if other and mean_cross[d] < min(other) else "low"
        lanes_by_dir[d] = detect_lanes(
            [t for t, _ in pairs],
            d,
            bin_px=cfg.lane_bin_px,
            smooth_bins=cfg.lane_smooth_bins,
            prominence_frac=cfg.lane_prominence,
            min_separation=cfg.min_lane_separation_px,
            min_displacement=cfg.min_displacement_px,
            inner_side=inner,
        )

    records = []
    for d in sorted(directed):
        for track, bearing in directed[d]:
            speed_series, accel_series = kinematics_series(
                track, cal, fps, cfg.smooth_window_s, cfg.accel_window_s
            )
            accels = [a for _, a in accel_series]
            records.append(
                VehicleRecord(
                    id=track.id,
                    cls=track.cls,
                    direction=d,
                    lane=assign_lane(track, lanes_by_dir[d]),
                    first_frame=track.first_frame,
                    last_frame=track.last_frame,
                    bearing_deg=bearing,
                    mean_speed_mph=float(np.mean([v for _, v in speed_series])),
                    mean_accel_ms2=float(np.mean(accels)) if accels else None,
                    speed_series=speed_series,
                    accel_series=accel_series,
                )
            )
    records.sort(key=lambda r: r.id)
    return records, lanes_by_dir, skipped


def summarize(records: Sequence[VehicleRecord], fps: float,
              min_speed_mph: float = 1.0) -> SceneSummary:
    """Scene totals: counts, per-direction space-mean speed, duration."""
    counts = directional_counts(records)
    by_dir: dict[int, list[float]] = {}
    excluded = 0
    for r in records:
        if r.mean_speed_mph < min_speed_mph:
            excluded += 1  # stopped vehicles would blow up the harmonic mean
            continue
        by_dir.setdefault(r.direction, []).append(r.mean_speed_mph)
    sms = {d: space_mean_speed(v) for d, v in sorted(by_dir.items())}
    if records:
        duration = (max(r.last_frame for r in records) - min(r.first_frame for r in records)) / fps
    else:
        duration = 0.0
    return SceneSummary(
        counts=counts,
        space_mean_speed_mph=sms,
        excluded_stopped=excluded,
        duration_s=duration,
        vehicle_total=len(records),
    )
