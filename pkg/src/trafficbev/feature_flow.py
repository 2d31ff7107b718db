"""Harris corners and pyramidal Lucas-Kanade flow on grayscale frames.

Used by track stitching to confirm a join candidate: corners on the vehicle
at its last seen frame are tracked forward frame by frame and the median of
their displacements predicts where the vehicle went.  Frames are binary P5
PGM files (frame_%06d.pgm), which keeps the pipeline free of video codecs.
Flow runs in the original camera view, where textures are not resampled, and
the result is warped to BEV afterwards.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.signal import convolve2d

from .errors import (
    DimensionMismatchError,
    MalformedPgmError,
    NoValidPointsError,
)
from .geometry import Homography, Point, apply_points

HARRIS_K = 0.04
MIN_FLOW_DIM = 16

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T
_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class GrayFrame:
    width: int
    height: int
    data: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        if self.data.shape != (self.height, self.width):
            raise ValueError(f"data shape {self.data.shape} != ({self.height}, {self.width})")


class FeaturePoint(NamedTuple):
    pos: Point
    response: float


def decode_pgm(data: bytes) -> GrayFrame:
    """Decode a binary (P5) PGM with maxval 255; '#' comments are skipped."""
    if not data.startswith(b"P5"):
        raise MalformedPgmError("not a binary PGM (magic must be P5)")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise MalformedPgmError(f"bad header token {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MalformedPgmError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise MalformedPgmError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos : pos + width * height]
    if len(raster) < width * height:
        raise MalformedPgmError("truncated raster")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GrayFrame(width, height, pixels.copy())


def encode_pgm(frame: GrayFrame) -> bytes:
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + frame.data.astype(np.uint8).tobytes()


def read_pgm(path) -> GrayFrame:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path, frame: GrayFrame):
    Path(path).write_bytes(encode_pgm(frame))


def harris_response(f: GrayFrame, k: float = HARRIS_K) -> np.ndarray:
    """Corner response R = det(M) - k * trace(M)^2 over the Sobel structure
    tensor M summed in a 3x3 window."""
    img = f.data.astype(float)
    gx = convolve2d(img, _SOBEL_X, mode="same", boundary="symm")
    gy = convolve2d(img, _SOBEL_Y, mode="same", boundary="symm")
    window = np.ones((3, 3))
    sxx = convolve2d(gx * gx, window, mode="same", boundary="symm")
    syy = convolve2d(gy * gy, window, mode="same", boundary="symm")
    sxy = convolve2d(gx * gy, window, mode="same", boundary="symm")
    det = sxx * syy - sxy * sxy
    trace = sxx + syy
    return det - k * trace * trace


def harris_corners(
    f: GrayFrame,
    roi: Optional[tuple] = None,
    max_points: int = 25,
    k: float = HARRIS_K,
    quality_level: float = 0.01,
) -> list[FeaturePoint]:
    """Strongest corners inside roi = (x, y, w, h), non-maximum suppressed.

    Peaks must beat their 3x3 neighbourhood, exceed quality_level times the
    strongest response, and be positive; at most max_points are returned, no
    two of them within 1 px of each other.
    """
    resp = harris_response(f, k)
    if roi is not None:
        x0, y0, w, h = roi
        if x0 < 2 or y0 < 2 or x0 + w > f.width - 2 or y0 + h > f.height - 2:
            raise ValueError(f"roi {roi} too close to the frame border")
        mask = np.zeros_like(resp, dtype=bool)
        mask[int(math.ceil(y0)) : int(y0 + h) + 1, int(math.ceil(x0)) : int(x0 + w) + 1] = True
    else:
        mask = np.ones_like(resp, dtype=bool)
        mask[:2, :] = mask[-2:, :] = False
        mask[:, :2] = mask[:, -2:] = False

    peak_mask = (resp == maximum_filter(resp, size=3)) & mask & (resp > 0)
    if not peak_mask.any():
        return []
    floor = quality_level * resp[peak_mask].max()
    ys, xs = np.nonzero(peak_mask & (resp > floor))
    order = np.argsort(resp[ys, xs])[::-1]

    out: list[FeaturePoint] = []
    for idx in order:
        px, py = float(xs[idx]), float(ys[idx])
        if any(math.hypot(px - fp.pos.x, py - fp.pos.y) <= 1.0 for fp in out):
            continue  # plateau duplicates from the equality-based NMS
        out.append(FeaturePoint(Point(px, py), float(resp[ys[idx], xs[idx]])))
        if len(out) >= max_points:
            break
    return out


def _downsample(img: np.ndarray) -> np.ndarray:
    # 5-tap binomial smoothing, then 2x decimation
    sm = convolve2d(img, _BINOMIAL5[:, None], mode="same", boundary="symm")
    sm = convolve2d(sm, _BINOMIAL5[None, :], mode="same", boundary="symm")
    return sm[::2, ::2]


def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img.astype(float)]
    for _ in range(levels - 1):
        pyr.append(_downsample(pyr[-1]))
    return pyr


def _sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.001)
    ys = np.clip(ys, 0.0, h - 1.001)
    x0 = xs.astype(int)
    y0 = ys.astype(int)
    fx = xs - x0
    fy = ys - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )


def lk_track(
    prev: GrayFrame,
    next_: GrayFrame,
    pts: Sequence,
    window: int = 15,
    levels: int = 3,
    max_iters: int = 30,
    eps: float = 0.01,
    min_eig_frac: float = 1e-4,
) -> list[tuple[Point, bool]]:
    """Iterative pyramidal Lucas-Kanade from prev to next.

    A point is invalid when its structure tensor's smaller eigenvalue falls
    below min_eig_frac times the window area (textureless patch) or when it
    leaves the frame.
    """
    if (prev.width, prev.height) != (next_.width, next_.height):
        raise DimensionMismatchError(
            f"frame sizes differ: {prev.width}x{prev.height} vs {next_.width}x{next_.height}"
        )
    if min(prev.width, prev.height) < MIN_FLOW_DIM:
        raise ValueError(f"frames must be at least {MIN_FLOW_DIM}px on each side")

    radius = window // 2
    eig_floor = min_eig_frac * window * window
    pyr_prev = _pyramid(prev.data.astype(float), levels)
    pyr_next = _pyramid(next_.data.astype(float), levels)
    grads = []
    for img in pyr_prev:
        gxi = np.gradient(img, axis=1)
        gyi = np.gradient(img, axis=0)
        grads.append((gxi, gyi))

    off = np.arange(-radius, radius + 1, dtype=float)
    ox, oy = np.meshgrid(off, off)
    ox = ox.ravel()
    oy = oy.ravel()

    results: list[tuple[Point, bool]] = []
    for p in pts:
        px, py = (p.pos.x, p.pos.y) if isinstance(p, FeaturePoint) else (p[0], p[1])
        d = np.zeros(2)
        valid = True
        for level in range(levels - 1, -1, -1):
            scale = 0.5**level
            lx, ly = px * scale, py * scale
            img_p = pyr_prev[level]
            img_n = pyr_next[level]
            gx, gy = grads[level]
            wx = lx + ox
            wy = ly + oy
            gxs = _sample_bilinear(gx, wx, wy)
            gys = _sample_bilinear(gy, wx, wy)
            template = _sample_bilinear(img_p, wx, wy)
            g11 = float(np.sum(gxs * gxs))
            g12 = float(np.sum(gxs * gys))
            g22 = float(np.sum(gys * gys))
            trace_half = (g11 + g22) / 2.0
            det = g11 * g22 - g12 * g12
            min_eig = trace_half - math.sqrt(max(trace_half * trace_half - det, 0.0))
            if level == 0 and min_eig < eig_floor:
                valid = False
                break
            if min_eig < 1e-12:
                continue  # no texture at this coarse level: keep the guess
            nu = np.zeros(2)
            for _ in range(max_iters):
                diff = template - _sample_bilinear(img_n, wx + d[0] + nu[0], wy + d[1] + nu[1])
                b1 = float(np.sum(diff * gxs))
                b2 = float(np.sum(diff * gys))
                inv_det = 1.0 / det
                step = np.array(
                    [(g22 * b1 - g12 * b2) * inv_det, (g11 * b2 - g12 * b1) * inv_det]
                )
                nu += step
                if math.hypot(*step) < eps:
                    break
            d = d + nu
            if level > 0:
                d = d * 2.0
        fx, fy = px + d[0], py + d[1]
        if not (0.0 <= fx <= prev.width - 1 and 0.0 <= fy <= prev.height - 1):
            valid = False
        results.append((Point(float(fx), float(fy)), valid))
    return results


def predict_displacement(
    frames: Sequence[GrayFrame],
    seed_pts: Sequence,
    homography: Optional[Homography] = None,
    **lk_kwargs,
) -> tuple[float, float]:
    """Median displacement of seed points chained across consecutive frames.

    Points that invalidate along the way are dropped; with a homography the
    per-point displacement is measured in the BEV plane (end minus start,
    both warped), otherwise in the image plane.
    """
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    if len(seed_pts) == 0:
        raise ValueError("need at least one seed point")

    start = np.array(
        [(p.pos.x, p.pos.y) if isinstance(p, FeaturePoint) else (p[0], p[1]) for p in seed_pts]
    )
    current = start.copy()
    alive = np.ones(len(start), dtype=bool)
    for prev, nxt in zip(frames, frames[1:]):
        moving = [Point(*current[i]) for i in np.nonzero(alive)[0]]
        tracked = lk_track(prev, nxt, moving, **lk_kwargs)
        for slot, (pos, ok) in zip(np.nonzero(alive)[0], tracked):
            if ok:
                current[slot] = pos
            else:
                alive[slot] = False
    if not alive.any():
        raise NoValidPointsError("all seed points invalidated")

    if homography is not None:
        disp = apply_points(homography, current[alive]) - apply_points(homography, start[alive])
    else:
        disp = current[alive] - start[alive]
    med = np.median(disp, axis=0)
    return float(med[0]), float(med[1])


_FRAME_RE = re.compile(r"frame_(\d{6})\.pgm$")


class FrameStore:
    """Directory of frame_%06d.pgm files, loaded lazily and cached."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._cache: dict[int, GrayFrame] = {}
        self.available = sorted(
            int(m.group(1))
            for p in self.directory.glob("frame_*.pgm")
            if (m := _FRAME_RE.search(p.name))
        )

    def __contains__(self, index: int) -> bool:
        return index in self._cache or (self.directory / f"frame_{index:06d}.pgm").exists()

    def get(self, index: int) -> GrayFrame:
        if index not in self._cache:
            self._cache[index] = read_pgm(self.directory / f"frame_{index:06d}.pgm")
        return self._cache[index]
