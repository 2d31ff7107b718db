"""Per-frame data association in the BEV plane.

Two trackers share the same building blocks (constant-velocity Kalman filter,
IOU costs, gated optimal assignment):

* ``MotpyTracker``: single-stage association with a combined IOU x
  feature-similarity cost; unmatched tracks are finalised when they pass a
  max-score / minimum-size rule.
* ``ByteTracker``: two-stage association that splits detections at a score
  threshold and recovers occluded objects from the low-score pool in a second
  pass, so a confidence dip does not break the track.

Both operate on class-canonical BEV boxes: the box sizes come from a running
per-class average of observed top-down sizes (``BevSizeModel``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import FrameOrderError, NumericallySingularError
from .geometry import Point

Bbox = tuple[float, float, float, float]  # x, y, w, h with (x, y) = top-left


@dataclass(frozen=True)
class Detection:
    """One detector output box on one frame, in image pixels."""

    frame: int
    cls: str
    bbox: Bbox
    score: float

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"frame must be >= 0, got {self.frame}")
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError(f"bbox must have positive size, got {self.bbox}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class BevDetection:
    """A detection warped to the BEV plane, carrying its class-canonical box."""

    frame: int
    cls: str
    center: Point
    bbox: Bbox
    score: float


class KalmanState(NamedTuple):
    mean: np.ndarray  # (cx, cy, vx, vy) in BEV px and BEV px/frame
    cov: np.ndarray  # 4x4


@dataclass(frozen=True)
class KalmanParams:
    """Constant-velocity model noise; desk-tunable per camera."""

    q_pos: float = 1.0
    q_vel: float = 4.0
    r_pos: float = 4.0
    init_vel_var: float = 100.0


_F = np.array([[1.0, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]])
_H = np.array([[1.0, 0, 0, 0], [0, 1, 0, 0]])


def kf_init(center: Point, params: KalmanParams = KalmanParams()) -> KalmanState:
    """New state at a measured position with zero initial velocity."""
    mean = np.array([center[0], center[1], 0.0, 0.0])
    cov = np.diag([params.r_pos, params.r_pos, params.init_vel_var, params.init_vel_var])
    return KalmanState(mean, cov)


def kf_predict(s: KalmanState, params: KalmanParams = KalmanParams()) -> KalmanState:
    q = np.diag([params.q_pos, params.q_pos, params.q_vel, params.q_vel])
    mean = _F @ s.mean
    cov = _F @ s.cov @ _F.T + q
    return KalmanState(mean, 0.5 * (cov + cov.T))


def kf_update(s: KalmanState, z: Point, params: KalmanParams = KalmanParams()) -> KalmanState:
    r = np.diag([params.r_pos, params.r_pos])
    innovation = np.asarray(z, dtype=float) - _H @ s.mean
    s_inn = _H @ s.cov @ _H.T + r
    try:
        gain = np.linalg.solve(s_inn, _H @ s.cov).T
    except np.linalg.LinAlgError as exc:
        raise NumericallySingularError("innovation covariance is singular") from exc
    mean = s.mean + gain @ innovation
    # Joseph form keeps the covariance symmetric PSD over long runs
    ikh = np.eye(4) - gain @ _H
    cov = ikh @ s.cov @ ikh.T + gain @ r @ gain.T
    return KalmanState(mean, 0.5 * (cov + cov.T))


def iou(a: Bbox, b: Bbox) -> float:
    """Intersection over union of two axis-aligned boxes, in [0, 1]."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ax1, ay1 = ax0 + aw, ay0 + ah
    bx1, by1 = bx0 + bw, by0 + bh
    ix = min(ax1, bx1) - max(ax0, bx0)
    iy = min(ay1, by1) - max(ay0, by0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # areas from the same corner arithmetic, so iou(a, a) is exactly 1
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def iou_matrix(boxes_a: Sequence[Bbox], boxes_b: Sequence[Bbox]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou(a, b)
    return out


def assign_min_cost(cost: np.ndarray, threshold: float, gate: Optional[np.ndarray] = None) -> list[tuple[int, int]]:
    """Optimal (Hungarian) min-cost matching with post-gating.

    Pairs whose cost exceeds ``threshold`` (or whose ``gate`` entry is False)
    never match; among the rest the total cost is minimised.  Greedy row/col
    picking would be order-dependent, so the optimal solver is used for both
    trackers.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    feasible = cost <= threshold
    if gate is not None:
        feasible &= np.asarray(gate, dtype=bool)
    if not feasible.any():
        return []
    big = abs(cost[feasible]).max() * cost.size + 1.0
    rows, cols = linear_sum_assignment(np.where(feasible, cost, big))
    return [(int(r), int(c)) for r, c in zip(rows, cols) if feasible[r, c]]


class TrackEntry(NamedTuple):
    frame: int
    state: KalmanState
    detection: BevDetection
    stage: str  # 'init' | 'high' | 'low' | 'matched'


class Track:
    """An identified vehicle's time-ordered BEV state sequence."""

    def __init__(self, track_id: int, det: BevDetection, params: KalmanParams, stage: str = "init"):
        self.id = track_id
        self.kalman = kf_init(det.center, params)
        self.entries: list[TrackEntry] = [TrackEntry(det.frame, self.kalman, det, stage)]
        self.bbox = det.bbox
        self.max_score = det.score
        self.missed = 0
        self.status = "active"
        self._class_votes: dict[str, list[float]] = {det.cls: [1, det.score]}

    @classmethod
    def from_entries(cls, track_id: int, entries: Sequence[TrackEntry], status: str = "finished") -> "Track":
        """Rebuild a track around existing entries (merging, deserialisation)."""
        if not entries:
            raise ValueError("a track needs at least one entry")
        frames = [e.frame for e in entries]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("entry frames must be strictly increasing")
        t = cls.__new__(cls)
        t.id = track_id
        t.entries = list(entries)
        t.kalman = entries[-1].state
        t.bbox = entries[-1].detection.bbox
        t.max_score = max(e.detection.score for e in entries)
        t.missed = 0
        t.status = status
        t._class_votes = {}
        for e in entries:
            votes = t._class_votes.setdefault(e.detection.cls, [0, 0.0])
            votes[0] += 1
            votes[1] += e.detection.score
        return t

    @property
    def cls(self) -> str:
        # majority class over associated detections; ties broken by score mass
        return max(self._class_votes.items(), key=lambda kv: (kv[1][0], kv[1][1]))[0]

    @property
    def first_frame(self) -> int:
        return self.entries[0].frame

    @property
    def last_frame(self) -> int:
        return self.entries[-1].frame

    @property
    def velocity(self) -> tuple[float, float]:
        return float(self.kalman.mean[2]), float(self.kalman.mean[3])

    def __len__(self):
        return len(self.entries)

    def predicted_bbox(self) -> Bbox:
        cx, cy = self.kalman.mean[0], self.kalman.mean[1]
        w, h = self.bbox[2], self.bbox[3]
        return (cx - w / 2, cy - h / 2, w, h)

    def predict(self, params: KalmanParams):
        self.kalman = kf_predict(self.kalman, params)

    def associate(self, det: BevDetection, params: KalmanParams, stage: str):
        self.kalman = kf_update(self.kalman, det.center, params)
        self.entries.append(TrackEntry(det.frame, self.kalman, det, stage))
        self.bbox = det.bbox
        self.max_score = max(self.max_score, det.score)
        self.missed = 0
        votes = self._class_votes.setdefault(det.cls, [0, 0.0])
        votes[0] += 1
        votes[1] += det.score

    def __repr__(self):
        return f"Track(id={self.id}, cls={self.cls!r}, frames={self.first_frame}..{self.last_frame}, n={len(self)})"


@dataclass
class MotpyConfig:
    sigma_l: float = 0.1  # low detection threshold
    sigma_h: float = 0.5  # high detection threshold
    sigma_iou: float = 0.25
    min_tsize: int = 3  # minimum track size in frames
    max_coast: int = 0  # 0 reproduces the drop-on-miss pseudocode exactly

    def __post_init__(self):
        if not self.sigma_l <= self.sigma_h:
            raise ValueError("sigma_l must not exceed sigma_h")


@dataclass
class ByteConfig:
    tau: float = 0.5  # detection score split
    match_thresh_high: float = 0.3  # first-association IOU gate
    match_thresh_low: float = 0.2  # second-association IOU gate
    max_coast: int = 15  # frames an unmatched track survives on prediction alone

    def __post_init__(self):
        for name in ("tau", "match_thresh_high", "match_thresh_low"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.max_coast < 0:
            raise ValueError("max_coast must be >= 0")


def feature_similarity(track_cls: str, det_cls: str) -> float:
    """Class-agreement stand-in for appearance features (none in the ingestion schema)."""
    return 1.0 if track_cls == det_cls else 0.5


class _BaseTracker:
    def __init__(self, kalman: KalmanParams = KalmanParams(), id_start: int = 1):
        self.kalman = kalman
        self.active: list[Track] = []
        self.finished: list[Track] = []
        self._next_id = id_start
        self._cursor: Optional[int] = None

    def _check_frame(self, frame: int, dets: Sequence[BevDetection]):
        if self._cursor is not None and frame <= self._cursor:
            raise FrameOrderError(f"frame {frame} not after frame {self._cursor}")
        for d in dets:
            if d.frame != frame:
                raise FrameOrderError(f"detection frame {d.frame} does not match step frame {frame}")
        self._cursor = frame

    def _spawn(self, det: BevDetection, stage: str) -> Track:
        t = Track(self._next_id, det, self.kalman, stage)
        self._next_id += 1
        self.active.append(t)
        return t

    def _finish(self, track: Track):
        track.status = "finished"
        self.finished.append(track)


class MotpyTracker(_BaseTracker):
    """Single-stage IOU + feature-similarity tracker."""

    def __init__(self, cfg: MotpyConfig = MotpyConfig(), kalman: KalmanParams = KalmanParams(), id_start: int = 1):
        super().__init__(kalman, id_start)
        self.cfg = cfg

    def _qualifies(self, track: Track) -> bool:
        return track.max_score >= self.cfg.sigma_h or len(track) >= self.cfg.min_tsize

    def step(self, frame: int, dets: Sequence[BevDetection]) -> list[Track]:
        """Advance one frame; returns tracks finished at this step."""
        self._check_frame(frame, dets)
        dets = [d for d in dets if d.score >= self.cfg.sigma_l]

        for t in self.active:
            t.predict(self.kalman)

        matches: list[tuple[int, int]] = []
        if self.active and dets:
            b_iou = iou_matrix([t.predicted_bbox() for t in self.active], [d.bbox for d in dets])
            feat = np.array([[feature_similarity(t.cls, d.cls) for d in dets] for t in self.active])
            # assignment cost combines IOU with feature similarity; the gate is raw IOU
            matches = assign_min_cost(1.0 - b_iou * feat, threshold=1.0, gate=b_iou >= self.cfg.sigma_iou)

        matched_tracks = {r for r, _ in matches}
        matched_dets = {c for _, c in matches}
        for r, c in matches:
            self.active[r].associate(dets[c], self.kalman, "matched")

        survivors = [t for i, t in enumerate(self.active) if i in matched_tracks]
        newly_finished = []
        for i, t in enumerate(self.active):
            if i in matched_tracks:
                continue
            t.missed += 1
            if t.missed <= self.cfg.max_coast:
                survivors.append(t)  # coast on prediction alone
            elif self._qualifies(t):
                self._finish(t)
                newly_finished.append(t)
            # else: dropped outright, too short and never confident
        self.active = survivors

        for c, d in enumerate(dets):
            if c not in matched_dets:
                self._spawn(d, "init")
        return newly_finished

    def flush(self) -> list[Track]:
        """End of stream: finalise remaining qualified tracks, drop the rest."""
        out = []
        for t in self.active:
            if self._qualifies(t):
                self._finish(t)
                out.append(t)
        self.active = []
        return out


class ByteTracker(_BaseTracker):
    """Two-stage tracker that recovers occluded objects from low-score boxes."""

    def __init__(self, cfg: ByteConfig = ByteConfig(), kalman: KalmanParams = KalmanParams(), id_start: int = 1):
        super().__init__(kalman, id_start)
        self.cfg = cfg

    def step(self, frame: int, dets: Sequence[BevDetection]) -> list[Track]:
        """Advance one frame; returns tracks finished (deleted) at this step."""
        self._check_frame(frame, dets)
        d_high = [d for d in dets if d.score > self.cfg.tau]
        d_low = [d for d in dets if d.score <= self.cfg.tau]

        for t in self.active:
            t.predict(self.kalman)

        # first association: every track against the high-score pool
        matches = self._associate(self.active, d_high, self.cfg.match_thresh_high)
        matched_tracks = {r for r, _ in matches}
        for r, c in matches:
            self.active[r].associate(d_high[c], self.kalman, "high")
        d_remain = [d for c, d in enumerate(d_high) if c not in {c for _, c in matches}]
        t_remain = [t for i, t in enumerate(self.active) if i not in matched_tracks]

        # second association: leftover tracks against the low-score pool
        matches2 = self._associate(t_remain, d_low, self.cfg.match_thresh_low)
        for r, c in matches2:
            t_remain[r].associate(d_low[c], self.kalman, "low")
        t_re_remain = [t for i, t in enumerate(t_remain) if i not in {r for r, _ in matches2}]

        newly_finished = []
        for t in t_re_remain:
            t.missed += 1
            if t.missed > self.cfg.max_coast:
                self.active.remove(t)
                self._finish(t)
                newly_finished.append(t)

        # only surviving high-score boxes start tracks; the low pool never does
        for d in d_remain:
            self._spawn(d, "init")
        return newly_finished

    @staticmethod
    def _associate(tracks: Sequence[Track], dets: Sequence[BevDetection], thresh: float) -> list[tuple[int, int]]:
        if not tracks or not dets:
            return []
        b_iou = iou_matrix([t.predicted_bbox() for t in tracks], [d.bbox for d in dets])
        return assign_min_cost(1.0 - b_iou, threshold=1.0 - thresh)

    def flush(self) -> list[Track]:
        out = list(self.active)
        for t in out:
            self._finish(t)
        self.active = []
        return out


@dataclass
class BevSizeModel:
    """Running per-class average of observed BEV box sizes.

    Serves the class-canonical box used for tracking: the configured default
    until ``warmup_count`` observations exist, the arithmetic mean afterwards.
    """

    defaults: dict[str, tuple[float, float]] = field(default_factory=dict)
    fallback: tuple[float, float] = (20.0, 10.0)
    warmup_count: int = 20
    _sums: dict[str, list[float]] = field(default_factory=dict)

    def observe(self, cls: str, w: float, h: float):
        if w <= 0 or h <= 0:
            raise ValueError("observed sizes must be positive")
        acc = self._sums.setdefault(cls, [0.0, 0.0, 0])
        acc[0] += w
        acc[1] += h
        acc[2] += 1

    def box_for(self, cls: str) -> tuple[float, float]:
        acc = self._sums.get(cls)
        if acc is not None and acc[2] >= self.warmup_count:
            return acc[0] / acc[2], acc[1] / acc[2]
        return self.defaults.get(cls, self.fallback)


def make_tracker(name: str, motpy: MotpyConfig, byte: ByteConfig, kalman: KalmanParams = KalmanParams()):
    if name == "motpy":
        return MotpyTracker(motpy, kalman)
    if name == "byte":
        return ByteTracker(byte, kalman)
    raise ValueError(f"unknown tracker {name!r} (expected 'motpy' or 'byte')")
