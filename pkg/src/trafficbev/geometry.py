"""Planar projective geometry: homographies, vanishing points, and road ROI quads.

Image coordinates are pixels with x rightward and y downward (origin top-left).
Bird's-eye-view (BEV) coordinates use the same convention on the warped plane.
A homography is a 3x3 invertible matrix defined up to scale (8 degrees of
freedom); it is estimated here from point correspondences via the direct
linear transform solved with SVD.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    AtInfinityError,
    DegenerateConfigurationError,
    DegenerateQuadError,
    ParallelLinesError,
    SingularMatrixError,
)

DENOM_EPS = 1e-12
COND_LIMIT = 1e12
_RANK_RTOL = 1e-9


class Point(NamedTuple):
    x: float
    y: float


# Same structure on both planes; the aliases keep call sites readable.
ImagePoint = Point
BevPoint = Point


class LineSeg(NamedTuple):
    p0: Point
    p1: Point


class Correspondence(NamedTuple):
    src: Point
    dst: Point


class RoiQuad(NamedTuple):
    a: Point  # near-left
    b: Point  # near-right
    c: Point  # far-right
    d: Point  # far-left


class Homography:
    """Invertible 3x3 map between two planes.

    Stored scaled so the largest-magnitude entry equals 1, which picks one
    canonical representative of the projective equivalence class and stays
    well-defined even when the bottom-right entry is near zero.
    """

    __slots__ = ("h",)

    def __init__(self, h):
        m = np.array(h, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError("homography must be a finite 3x3 matrix")
        peak = np.abs(m).argmax()
        if m.flat[peak] == 0.0:
            raise SingularMatrixError("zero matrix")
        m = m / m.flat[peak]
        if abs(np.linalg.det(m)) < 1e-12:
            raise SingularMatrixError("matrix is rank-deficient")
        self.h = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def __repr__(self):
        return f"Homography({self.h.tolist()!r})"


def _conditioning_transform(pts: np.ndarray) -> np.ndarray:
    """Hartley conditioning: centroid to origin, mean distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.hypot(*(pts - centroid).T).mean()
    if dist < DENOM_EPS:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2.0) / dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _apply_affine(t: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ t[:2, :2].T + t[:2, 2]


def dlt_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Stack the two direct-linear-transform rows per correspondence (2n x 9)."""
    n = len(src)
    a = np.zeros((2 * n, 9))
    xs, ys = src[:, 0], src[:, 1]
    xd, yd = dst[:, 0], dst[:, 1]
    a[0::2, 0] = xs
    a[0::2, 1] = ys
    a[0::2, 2] = 1.0
    a[0::2, 6] = -xd * xs
    a[0::2, 7] = -xd * ys
    a[0::2, 8] = -xd
    a[1::2, 3] = xs
    a[1::2, 4] = ys
    a[1::2, 5] = 1.0
    a[1::2, 6] = -yd * xs
    a[1::2, 7] = -yd * ys
    a[1::2, 8] = -yd
    return a


def estimate_homography(pairs: Sequence[Correspondence]) -> Homography:
    """Estimate the plane-to-plane map from four or more correspondences.

    Builds the 2n x 9 homogeneous system (two rows per pair), minimises
    ||A h|| subject to ||h|| = 1 via SVD, and reshapes the right singular
    vector of the smallest singular value into the 3x3 matrix.  Both point
    sets are Hartley-conditioned before the solve and the result is
    de-conditioned afterwards; without this the system is badly scaled for
    pixel coordinates anywhere between 320x240 and 4K frames.
    """
    if len(pairs) < 4:
        raise ValueError(f"need at least 4 correspondences, got {len(pairs)}")
    src = np.array([[p.src[0], p.src[1]] for p in pairs], dtype=float)
    dst = np.array([[p.dst[0], p.dst[1]] for p in pairs], dtype=float)
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("correspondences must be finite")

    t_src = _conditioning_transform(src)
    t_dst = _conditioning_transform(dst)
    a = dlt_matrix(_apply_affine(t_src, src), _apply_affine(t_dst, dst))

    _, s, vt = np.linalg.svd(a)
    # A has <= 9 singular values; missing ones (n=4 gives 8) are implicit zeros.
    sv = np.zeros(9)
    sv[: len(s)] = s
    if sv[0] <= 0.0 or sv[7] < _RANK_RTOL * sv[0]:
        # two vanishing singular values: a one-parameter family of solutions,
        # i.e. collinear or duplicated correspondences
        raise DegenerateConfigurationError("correspondences do not determine a unique map")

    h_cond = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_cond @ t_src
    return Homography(h)


def apply_point(h: Homography, p: Point) -> Point:
    """Warp one point through the homography with perspective division."""
    x, y = float(p[0]), float(p[1])
    m = h.h
    den = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(den) < DENOM_EPS:
        raise AtInfinityError(f"point ({x}, {y}) maps to the line at infinity")
    return Point(
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / den,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / den,
    )


def apply_points(h: Homography, pts) -> np.ndarray:
    """Vectorised apply_point for an (n, 2) array of points."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    q = np.hstack([pts, np.ones((len(pts), 1))]) @ h.h.T
    den = q[:, 2]
    bad = np.abs(den) < DENOM_EPS
    if bad.any():
        raise AtInfinityError(f"{int(bad.sum())} point(s) map to the line at infinity")
    return q[:, :2] / den[:, None]


def invert(h: Homography) -> Homography:
    """Matrix inverse of the map, re-normalised."""
    if np.linalg.cond(h.h) > COND_LIMIT:
        raise SingularMatrixError("homography is numerically singular")
    return Homography(np.linalg.inv(h.h))


def _homogeneous_line(seg: LineSeg) -> np.ndarray:
    p0, p1 = seg
    if p0[0] == p1[0] and p0[1] == p1[1]:
        raise ValueError("degenerate segment: endpoints coincide")
    line = np.cross([p0[0], p0[1], 1.0], [p1[0], p1[1], 1.0])
    # normalise by the direction normal so the parallel test is scale-free
    return line / np.hypot(line[0], line[1])


def intersect_lines(l1: LineSeg, l2: LineSeg) -> Point:
    """Intersection of the two infinite lines through the given segments.

    Road boundaries extended this way converge at the scene's vanishing point.
    """
    p = np.cross(_homogeneous_line(l1), _homogeneous_line(l2))
    if abs(p[2]) < DENOM_EPS:
        raise ParallelLinesError("lines are parallel")
    return Point(p[0] / p[2], p[1] / p[2])


def second_vanishing_point(vp1: Point, image_width: float, side: str = "right") -> Point:
    """Second vanishing point on the same horizontal horizon line.

    Placed at twice the image width from the first vanishing point, on the
    requested side.
    """
    if image_width <= 0:
        raise ValueError("image_width must be positive")
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    offset = 2.0 * image_width
    return Point(vp1.x + offset if side == "right" else vp1.x - offset, vp1.y)


def _line_x_at_y(seg: LineSeg, y: float) -> float:
    p0, p1 = seg
    dy = p1[1] - p0[1]
    if abs(dy) < DENOM_EPS:
        raise DegenerateQuadError(f"boundary line is parallel to scanline y={y}")
    t = (y - p0[1]) / dy
    return p0[0] + t * (p1[0] - p0[0])


def _segments_cross(a0: Point, a1: Point, b0: Point, b1: Point) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    d1 = orient(a0, a1, b0)
    d2 = orient(a0, a1, b1)
    d3 = orient(b0, b1, a0)
    d4 = orient(b0, b1, a1)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def quad_area(q: RoiQuad) -> float:
    """Shoelace area (positive regardless of winding)."""
    pts = [q.a, q.b, q.c, q.d]
    s = 0.0
    for i in range(4):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % 4]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


def roi_quad(left: LineSeg, right: LineSeg, near_y: float, far_y: float) -> RoiQuad:
    """Road quadrilateral from two boundary lines and two horizontal scanlines.

    Corners are the boundary-line intersections with the scanlines, ordered
    near-left, near-right, far-right, far-left.  near_y must be below far_y
    in the image (y grows downward) and the far scanline must stay strictly
    below the boundaries' vanishing point, else the far edge collapses.
    """
    if not near_y > far_y:
        raise ValueError("near_y must exceed far_y (image y grows downward)")
    try:
        vp = intersect_lines(left, right)
    except ParallelLinesError:
        vp = None
    if vp is not None and far_y <= vp.y:
        raise DegenerateQuadError("far scanline reaches the vanishing point")

    a = Point(_line_x_at_y(left, near_y), near_y)
    b = Point(_line_x_at_y(right, near_y), near_y)
    c = Point(_line_x_at_y(right, far_y), far_y)
    d = Point(_line_x_at_y(left, far_y), far_y)
    quad = RoiQuad(a, b, c, d)

    if quad_area(quad) < 1e-9:
        raise DegenerateQuadError("quad has zero area")
    if _segments_cross(a, b, c, d) or _segments_cross(b, c, d, a):
        raise DegenerateQuadError("quad is self-intersecting")
    return quad


def warp_box(h: Homography, x: float, y: float, w: float, hgt: float) -> tuple[float, float, float, float]:
    """Warp an axis-aligned box corner-wise and return the axis-aligned extent."""
    corners = apply_points(h, [(x, y), (x + w, y), (x, y + hgt), (x + w, y + hgt)])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    return float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1])
