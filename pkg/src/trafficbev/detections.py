"""Detection stream ingestion: one self-describing JSON record per line.

Record fields: frame (int >= 0), cls (string), bbox ([x, y, w, h] pixels,
top-left corner plus size, sub-pixel floats allowed), score (float in [0, 1]).
Frames must be non-decreasing so records group contiguously by frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

from .errors import DetectionParseError
from .tracking import Detection


@dataclass
class DetectionStream:
    by_frame: list = field(default_factory=list)  # [(frame, [Detection, ...]), ...]

    @property
    def n_detections(self) -> int:
        return sum(len(dets) for _, dets in self.by_frame)

    @property
    def min_frame(self):
        return self.by_frame[0][0] if self.by_frame else None

    @property
    def max_frame(self):
        return self.by_frame[-1][0] if self.by_frame else None

    def __iter__(self):
        return iter(self.by_frame)

    def all_detections(self):
        for _, dets in self.by_frame:
            yield from dets


def _field(record: dict, name: str, line_no: int):
    if name not in record:
        raise DetectionParseError(line_no, f"missing field {name!r}")
    return record[name]


def parse_detections(lines: Iterable[str]) -> DetectionStream:
    """Parse and validate a line-delimited detection stream.

    Raises DetectionParseError with the offending line number on malformed
    records, negative sizes, scores outside [0, 1], or frame regressions.
    """
    stream = DetectionStream()
    last_frame = None
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DetectionParseError(line_no, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise DetectionParseError(line_no, "record must be a JSON object")

        frame = _field(record, "frame", line_no)
        cls = _field(record, "cls", line_no)
        bbox = _field(record, "bbox", line_no)
        score = _field(record, "score", line_no)

        if isinstance(frame, bool) or not isinstance(frame, int) or frame < 0:
            raise DetectionParseError(line_no, f"frame must be an integer >= 0, got {frame!r}")
        if last_frame is not None and frame < last_frame:
            raise DetectionParseError(line_no, f"frame regression: {frame} after {last_frame}")
        if not isinstance(cls, str) or not cls:
            raise DetectionParseError(line_no, f"cls must be a non-empty string, got {cls!r}")
        if (
            not isinstance(bbox, list)
            or len(bbox) != 4
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox)
            or not all(math.isfinite(v) for v in bbox)
        ):
            raise DetectionParseError(line_no, f"bbox must be 4 finite numbers, got {bbox!r}")
        if bbox[2] <= 0 or bbox[3] <= 0:
            raise DetectionParseError(line_no, f"bbox size must be positive, got {bbox!r}")
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not 0.0 <= score <= 1.0:
            raise DetectionParseError(line_no, f"score must be in [0, 1], got {score!r}")

        det = Detection(frame, cls, tuple(float(v) for v in bbox), float(score))
        if stream.by_frame and stream.by_frame[-1][0] == frame:
            stream.by_frame[-1][1].append(det)
        else:
            stream.by_frame.append((frame, [det]))
        last_frame = frame
    return stream


def write_detections(stream: DetectionStream, fp: TextIO):
    """Serialise a stream back to the line format; floats keep full precision."""
    for frame, dets in stream.by_frame:
        for d in dets:
            fp.write(
                json.dumps(
                    {"frame": d.frame, "cls": d.cls, "bbox": list(d.bbox), "score": d.score}
                )
            )
            fp.write("\n")
