"""Shared builders for synthetic tracks used across test modules."""

from trafficbev.geometry import Point
from trafficbev.tracking import BevDetection, KalmanParams, Track, kf_predict

FT_PER_MILE = 5280.0
S_PER_HOUR = 3600.0


def bev_det(frame, x, y, w=10.0, h=24.0, score=0.9, cls="car"):
    return BevDetection(frame, cls, Point(x, y), (x - w / 2, y - h / 2, w, h), score)


def make_track(track_id, points, cls="car", w=10.0, h=24.0, score=0.9):
    """Track from (frame, x, y) triples, running the Kalman filter through them."""
    params = KalmanParams()
    frame0, x0, y0 = points[0]
    t = Track(track_id, bev_det(frame0, x0, y0, w, h, score, cls), params)
    for frame, x, y in points[1:]:
        t.kalman = kf_predict(t.kalman, params)
        t.associate(bev_det(frame, x, y, w, h, score, cls), params, "matched")
    t.status = "finished"
    return t


def track_from_speed_profile(track_id, speed_mph_fn, duration_s, fps, ft_per_px,
                             x0=0.0, y=50.0, cls="car"):
    """Track moving along +x whose frame displacements integrate the given
    speed profile exactly (trapezoid rule, exact for piecewise-linear speeds
    with no breakpoint inside a frame)."""
    n_frames = int(round(duration_s * fps))
    dt = 1.0 / fps
    xs = [x0]
    for k in range(n_frames):
        v0 = speed_mph_fn(k * dt) * FT_PER_MILE / S_PER_HOUR
        v1 = speed_mph_fn((k + 1) * dt) * FT_PER_MILE / S_PER_HOUR
        xs.append(xs[-1] + (v0 + v1) / 2.0 * dt / ft_per_px)
    return make_track(track_id, [(k, x, y) for k, x in enumerate(xs)], cls=cls)
