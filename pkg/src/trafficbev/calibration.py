"""Pixel-to-world auto-calibration from observed vehicle box sizes.

Box widths and heights in the BEV plane grow with distance from the camera.
A linear regression of box width on BEV x and box height on BEV y turns that
trend into two correction-factor layers: k_w(x, y) = 1 / predicted_width and
k_h(x, y) = 1 / predicted_height, sampled on a grid.  A BEV pixel displacement
(dxp, dyp) then converts to feet as

    dx_ft = ref_length_ft * k_w * dxp
    dy_ft = ref_height_ft * k_h * dyp

with the reference dimensions of a sedan (14.7 ft long, 6 ft across) as the
default constants.  Only the reference class feeds the fit, since those
constants describe a sedan; a bus would bias the predicted width.  The model
is per-camera: magnitudes change from scene to scene, so it is re-fit for
each one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    InsufficientSamplesError,
    NonPositivePredictionError,
    OutOfGridError,
)
from .geometry import Point

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CalSample:
    """One observed BEV box: center position plus raw (pre-canonical) size."""

    center: Point
    w: float
    h: float
    cls: str


@dataclass(frozen=True)
class CalibrationConfig:
    min_samples: int = 30
    min_span_fraction: float = 0.25  # of the grid extent, per axis
    cell_px: float = 8.0
    degree: int = 1
    ref_length_ft: float = 14.7
    ref_height_ft: float = 6.0
    reference_class: str = "car"
    fallback_ft_per_px: float = 0.5


class CalibrationModel:
    """Fitted width/height coefficient pair plus the sampled correction grids."""

    def __init__(self, width_coeffs, height_coeffs, grid_size, cell_px,
                 ref_length_ft=14.7, ref_height_ft=6.0, residuals=(0.0, 0.0)):
        self.width_coeffs = np.asarray(width_coeffs, dtype=float)
        self.height_coeffs = np.asarray(height_coeffs, dtype=float)
        self.grid_size = (float(grid_size[0]), float(grid_size[1]))
        self.cell_px = float(cell_px)
        self.ref_length_ft = float(ref_length_ft)
        self.ref_height_ft = float(ref_height_ft)
        self.residuals = (float(residuals[0]), float(residuals[1]))

        self._xs = _grid_nodes(self.grid_size[0], self.cell_px)
        self._ys = _grid_nodes(self.grid_size[1], self.cell_px)
        w_pred = np.polynomial.polynomial.polyval(self._xs, self.width_coeffs)
        h_pred = np.polynomial.polynomial.polyval(self._ys, self.height_coeffs)
        if np.any(w_pred <= 0) or np.any(h_pred <= 0):
            raise NonPositivePredictionError("predicted box size <= 0 somewhere on the grid")
        # two layers on the same (ny, nx) grid: widths vary along x, heights along y
        self.k_w_grid = np.tile(1.0 / w_pred, (len(self._ys), 1))
        self.k_h_grid = np.tile((1.0 / h_pred)[:, None], (1, len(self._xs)))

    @classmethod
    def constant(cls, grid_size, ft_per_px, cfg: CalibrationConfig = CalibrationConfig()) -> "CalibrationModel":
        """Fixed-scale fallback: every displacement converts at ft_per_px."""
        return cls(
            width_coeffs=[cfg.ref_length_ft / ft_per_px],
            height_coeffs=[cfg.ref_height_ft / ft_per_px],
            grid_size=grid_size,
            cell_px=cfg.cell_px,
            ref_length_ft=cfg.ref_length_ft,
            ref_height_ft=cfg.ref_height_ft,
        )

    def predicted_width(self, x: float) -> float:
        return float(np.polynomial.polynomial.polyval(x, self.width_coeffs))

    def predicted_height(self, y: float) -> float:
        return float(np.polynomial.polynomial.polyval(y, self.height_coeffs))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "calibration_model",
            "width_coeffs": self.width_coeffs.tolist(),
            "height_coeffs": self.height_coeffs.tolist(),
            "grid_size": list(self.grid_size),
            "cell_px": self.cell_px,
            "ref_length_ft": self.ref_length_ft,
            "ref_height_ft": self.ref_height_ft,
            "residuals": list(self.residuals),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CalibrationModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported calibration schema_version: {doc.get('schema_version')!r}")
        return cls(
            width_coeffs=doc["width_coeffs"],
            height_coeffs=doc["height_coeffs"],
            grid_size=tuple(doc["grid_size"]),
            cell_px=doc["cell_px"],
            ref_length_ft=doc["ref_length_ft"],
            ref_height_ft=doc["ref_height_ft"],
            residuals=tuple(doc.get("residuals", (0.0, 0.0))),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "CalibrationModel":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _grid_nodes(extent: float, cell: float) -> np.ndarray:
    n = int(np.ceil(extent / cell)) + 1
    return np.arange(n) * cell


def fit_calibration(samples: Sequence[CalSample], grid: tuple[float, float],
                    cfg: CalibrationConfig = CalibrationConfig()) -> CalibrationModel:
    """Ordinary least squares of box width on x and box height on y.

    Requires enough reference-class samples spread over enough of the grid to
    pin the trend down; otherwise raises InsufficientSamplesError and the
    caller falls back to a constant-scale model.
    """
    cars = [s for s in samples if s.cls == cfg.reference_class]
    if len(cars) < cfg.min_samples:
        raise InsufficientSamplesError(
            f"{len(cars)} {cfg.reference_class!r} samples, need {cfg.min_samples}"
        )
    xs = np.array([s.center[0] for s in cars])
    ys = np.array([s.center[1] for s in cars])
    ws = np.array([s.w for s in cars])
    hs = np.array([s.h for s in cars])

    span_x = xs.max() - xs.min()
    span_y = ys.max() - ys.min()
    need_x = cfg.min_span_fraction * grid[0]
    need_y = cfg.min_span_fraction * grid[1]
    if span_x < need_x or span_y < need_y:
        raise InsufficientSamplesError(
            f"sample span ({span_x:.1f}, {span_y:.1f}) px below required ({need_x:.1f}, {need_y:.1f})"
        )

    width_coeffs = np.polynomial.polynomial.polyfit(xs, ws, cfg.degree)
    height_coeffs = np.polynomial.polynomial.polyfit(ys, hs, cfg.degree)
    res_w = float(np.mean((np.polynomial.polynomial.polyval(xs, width_coeffs) - ws) ** 2))
    res_h = float(np.mean((np.polynomial.polynomial.polyval(ys, height_coeffs) - hs) ** 2))

    return CalibrationModel(
        width_coeffs, height_coeffs, grid, cfg.cell_px,
        cfg.ref_length_ft, cfg.ref_height_ft, residuals=(res_w, res_h),
    )


def _bilinear(grid: np.ndarray, gx: float, gy: float) -> float:
    ny, nx = grid.shape
    j = min(int(np.floor(gx)), nx - 2)
    i = min(int(np.floor(gy)), ny - 2)
    j = max(j, 0)
    i = max(i, 0)
    fx = gx - j
    fy = gy - i
    return float(
        grid[i, j] * (1 - fx) * (1 - fy)
        + grid[i, j + 1] * fx * (1 - fy)
        + grid[i + 1, j] * (1 - fx) * fy
        + grid[i + 1, j + 1] * fx * fy
    )


def calibrated_displacement(m: CalibrationModel, at: Point, dxp: float, dyp: float) -> tuple[float, float]:
    """Convert a BEV pixel displacement at a grid location to feet."""
    x, y = float(at[0]), float(at[1])
    w, h = m.grid_size
    if not (0.0 <= x <= w and 0.0 <= y <= h):
        raise OutOfGridError(f"point ({x}, {y}) outside grid {m.grid_size}")
    gx, gy = x / m.cell_px, y / m.cell_px
    k_w = _bilinear(m.k_w_grid, gx, gy)
    k_h = _bilinear(m.k_h_grid, gx, gy)
    return m.ref_length_ft * k_w * dxp, m.ref_height_ft * k_h * dyp
