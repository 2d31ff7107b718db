"""Scene configuration: camera geometry, tracker choice, and stage settings.

A scene document (JSON, versioned) describes one camera.  The view-to-BEV
map comes either from four explicit point correspondences ("roi") or from
two road boundary lines plus horizontal scanlines ("boundary_lines"); exactly
one of the two must be present.  The quad's destination is a canonical BEV
rectangle with travel along +x: the near road edge maps to x = 0, the far
edge to x = bev width, the left boundary to y = 0.  That orientation pairs
the vehicle-length reference constant with along-road displacements and the
lateral one with cross-road displacements.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .analytics import AnalyticsConfig
from .calibration import CalibrationConfig
from .geometry import (
    Correspondence,
    Homography,
    LineSeg,
    Point,
    estimate_homography,
    intersect_lines,
    roi_quad,
)
from .stitching import StitchConfig
from .tracking import ByteConfig, KalmanParams, MotpyConfig

SCHEMA_VERSION = 1

DEFAULT_CLASS_SIZES = {
    # BEV px defaults at ~0.5 ft/px: (along-road length, cross-road width)
    "motorcycle": (14.0, 6.0),
    "car": (30.0, 12.0),
    "bus": (80.0, 17.0),
    "single_unit": (50.0, 16.0),
    "trailer": (100.0, 17.0),
    "multi_trailer": (140.0, 17.0),
}


@dataclass
class SceneConfig:
    image_size: tuple
    fps: float
    bev_size: tuple = (800.0, 200.0)
    correspondences: Optional[list] = None  # 4+ Correspondence
    boundary: Optional[dict] = None  # left/right LineSeg, near_y, far_y
    classes: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_SIZES))
    tracker: str = "byte"
    motpy: MotpyConfig = field(default_factory=MotpyConfig)
    byte: ByteConfig = field(default_factory=ByteConfig)
    kalman: KalmanParams = field(default_factory=KalmanParams)
    stitching: StitchConfig = field(default_factory=StitchConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    analytics: AnalyticsConfig = field(default_factory=AnalyticsConfig)
    size_warmup: int = 20
    frames_dir: Optional[str] = None

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if min(self.image_size) <= 0 or min(self.bev_size) <= 0:
            raise ValueError("image_size and bev_size must be positive")
        if (self.correspondences is None) == (self.boundary is None):
            raise ValueError("exactly one of roi correspondences / boundary lines required")
        # stitching's acceptance distance scales with this camera's resolution
        self.stitching = StitchConfig(
            max_deflection_deg=self.stitching.max_deflection_deg,
            dist_fraction=self.stitching.dist_fraction,
            dp_epsilon=self.stitching.dp_epsilon,
            resolution=tuple(float(v) for v in self.image_size),
        )


def bev_rectangle(bev_size) -> list[Point]:
    """Destination corners for a near-left, near-right, far-right, far-left quad."""
    w, h = bev_size
    return [Point(0.0, 0.0), Point(0.0, h), Point(w, h), Point(w, 0.0)]


def scene_homography(cfg: SceneConfig) -> Homography:
    """The image-to-BEV map for this scene."""
    if cfg.correspondences is not None:
        return estimate_homography(cfg.correspondences)

    left = cfg.boundary["left"]
    right = cfg.boundary["right"]
    near_y = cfg.boundary.get("near_y")
    far_y = cfg.boundary.get("far_y")
    if near_y is None:
        near_y = float(cfg.image_size[1])
    if far_y is None:
        # halfway between the vanishing point and the image bottom
        vp = intersect_lines(left, right)
        far_y = (vp.y + cfg.image_size[1]) / 2.0
    quad = roi_quad(left, right, near_y, far_y)
    pairs = [Correspondence(src, dst) for src, dst in zip(quad, bev_rectangle(cfg.bev_size))]
    return estimate_homography(pairs)


def _line_seg(doc) -> LineSeg:
    (x0, y0), (x1, y1) = doc
    return LineSeg(Point(float(x0), float(y0)), Point(float(x1), float(y1)))


def scene_from_dict(doc: dict) -> SceneConfig:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported scene schema_version: {doc.get('schema_version')!r}")

    correspondences = None
    boundary = None
    if "roi" in doc and "boundary_lines" in doc:
        raise ValueError("scene must have either roi or boundary_lines, not both")
    if "roi" in doc:
        correspondences = [
            Correspondence(Point(*map(float, c["src"])), Point(*map(float, c["dst"])))
            for c in doc["roi"]["correspondences"]
        ]
    elif "boundary_lines" in doc:
        b = doc["boundary_lines"]
        boundary = {"left": _line_seg(b["left"]), "right": _line_seg(b["right"])}
        for key in ("near_y", "far_y"):
            if key in b:
                boundary[key] = float(b[key])
    else:
        raise ValueError("scene needs roi or boundary_lines")

    classes = {
        str(name): (float(wh[0]), float(wh[1]))
        for name, wh in doc.get("classes", DEFAULT_CLASS_SIZES).items()
    }
    size_doc = doc.get("size_model", {})
    return SceneConfig(
        image_size=tuple(doc["image_size"]),
        fps=float(doc["fps"]),
        bev_size=tuple(map(float, doc.get("bev_size", (800.0, 200.0)))),
        correspondences=correspondences,
        boundary=boundary,
        classes=classes,
        tracker=doc.get("tracker", "byte"),
        motpy=MotpyConfig(**doc.get("motpy", {})),
        byte=ByteConfig(**doc.get("byte", {})),
        kalman=KalmanParams(**doc.get("kalman", {})),
        stitching=StitchConfig(**doc.get("stitching", {})),
        calibration=CalibrationConfig(**doc.get("calibration", {})),
        analytics=AnalyticsConfig(**doc.get("analytics", {})),
        size_warmup=int(size_doc.get("warmup_count", 20)),
        frames_dir=doc.get("frames_dir"),
    )


def scene_to_dict(cfg: SceneConfig) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "image_size": list(cfg.image_size),
        "fps": cfg.fps,
        "bev_size": list(cfg.bev_size),
        "classes": {k: list(v) for k, v in cfg.classes.items()},
        "tracker": cfg.tracker,
        "motpy": vars(cfg.motpy),
        "byte": vars(cfg.byte),
        "kalman": vars(cfg.kalman),
        "stitching": {
            "max_deflection_deg": cfg.stitching.max_deflection_deg,
            "dist_fraction": cfg.stitching.dist_fraction,
            "dp_epsilon": cfg.stitching.dp_epsilon,
        },
        "calibration": vars(cfg.calibration),
        "analytics": vars(cfg.analytics),
        "size_model": {"warmup_count": cfg.size_warmup},
    }
    if cfg.correspondences is not None:
        doc["roi"] = {
            "correspondences": [
                {"src": [c.src.x, c.src.y], "dst": [c.dst.x, c.dst.y]}
                for c in cfg.correspondences
            ]
        }
    else:
        b = {
            "left": [[cfg.boundary["left"].p0.x, cfg.boundary["left"].p0.y],
                     [cfg.boundary["left"].p1.x, cfg.boundary["left"].p1.y]],
            "right": [[cfg.boundary["right"].p0.x, cfg.boundary["right"].p0.y],
                      [cfg.boundary["right"].p1.x, cfg.boundary["right"].p1.y]],
        }
        for key in ("near_y", "far_y"):
            if key in cfg.boundary:
                b[key] = cfg.boundary[key]
        doc["boundary_lines"] = b
    if cfg.frames_dir is not None:
        doc["frames_dir"] = cfg.frames_dir
    return doc


def load_scene(path) -> SceneConfig:
    with open(path, "r", encoding="utf-8") as f:
        return scene_from_dict(json.load(f))


def save_scene(cfg: SceneConfig, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scene_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
