"""Command-line interface.

Stages are separate subcommands so a camera's calibration can be fitted once
and reused across runs:

    trafficbev synth     --spec spec.json --out scene_dir
    trafficbev calibrate --detections dets.jsonl --scene scene.json --out model.json
    trafficbev track     --detections dets.jsonl --scene scene.json --tracker byte --out run_dir
    trafficbev analyze   --tracks run_dir --calibration model.json --out report_dir
    trafficbev metrics   --pred report_dir/summary.json --truth counts.json
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analytics import build_vehicle_records, error_rate, summarize
from .calibration import CalibrationModel, fit_calibration
from .detections import parse_detections, write_detections
from .errors import EngineError, InsufficientSamplesError
from .pipeline import (
    Diagnostics,
    ImageFlowPredictor,
    load_tracks,
    project_detections,
    save_tracks,
    write_outputs,
)
from .feature_flow import FrameStore
from .scene import load_scene, save_scene
from .stitching import join_tracks
from .synth import SynthSpec, gen_synthetic_scene
from .tracking import make_tracker


def _read_detections(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_detections(f)


def cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = SynthSpec.from_dict(doc)
    stream, truth, cfg = gen_synthetic_scene(spec)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "detections.jsonl", "w", encoding="utf-8") as f:
        write_detections(stream, f)
    save_scene(cfg, out / "scene.json")
    truth.save(out / "truth.json")
    print(f"wrote {stream.n_detections} detections for {len(truth.vehicles)} vehicles to {out}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = load_scene(args.scene)
    stream = _read_detections(args.detections)
    _, _, cal_samples, _ = project_detections(cfg, stream)
    try:
        model = fit_calibration(cal_samples, cfg.bev_size, cfg.calibration)
        print(
            f"fitted on {len(cal_samples)} samples; "
            f"width line {model.width_coeffs.tolist()}, residuals {model.residuals}"
        )
    except InsufficientSamplesError as exc:
        model = CalibrationModel.constant(
            cfg.bev_size, cfg.calibration.fallback_ft_per_px, cfg.calibration
        )
        print(f"insufficient samples ({exc}); wrote constant-scale fallback", file=sys.stderr)
    model.save(args.out)
    print(f"calibration model written to {args.out}")
    return 0


def cmd_track(args) -> int:
    cfg = load_scene(args.scene)
    if args.tracker:
        cfg.tracker = args.tracker
    if args.frames_dir:
        cfg.frames_dir = args.frames_dir

    stream = _read_detections(args.detections)
    h, frames, _, outside = project_detections(cfg, stream)
    tracker = make_tracker(cfg.tracker, cfg.motpy, cfg.byte, cfg.kalman)
    for frame, dets in frames:
        tracker.step(frame, dets)
    tracker.flush()
    finished = sorted(tracker.finished, key=lambda t: t.id)

    flow = None
    if cfg.frames_dir:
        store = FrameStore(cfg.frames_dir)
        if store.available:
            flow = ImageFlowPredictor(store, h, cfg.image_size)
    stitched = join_tracks(finished, cfg.fps, cfg.stitching, flow)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_tracks(stitched, cfg, out / "tracks.json")
    diag = Diagnostics(
        frames_processed=len(frames),
        detections_in=stream.n_detections,
        detections_outside_bev=outside,
        tracks_finished=len(finished),
        tracks_after_stitch=len(stitched),
    )
    with open(out / "diagnostics.json", "w", encoding="utf-8") as f:
        json.dump(diag.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"{len(finished)} tracks ({len(stitched)} after stitching) written to {out}")
    return 0


def cmd_analyze(args) -> int:
    tracks_path = Path(args.tracks)
    if tracks_path.is_dir():
        tracks_path = tracks_path / "tracks.json"
    tracks, fps, _, _ = load_tracks(tracks_path)
    model = CalibrationModel.load(args.calibration)

    from .analytics import AnalyticsConfig

    analytics_cfg = AnalyticsConfig()
    records, _, skipped = build_vehicle_records(tracks, model, fps, analytics_cfg)
    summary = summarize(records, fps, analytics_cfg.min_speed_mph)

    real_counts = None
    if args.real_counts:
        with open(args.real_counts, "r", encoding="utf-8") as f:
            doc = json.load(f)
        real_counts = doc.get("counts", doc)

    diag = Diagnostics(
        tracks_after_stitch=len(tracks),
        skipped_short_tracks=skipped,
    )
    written = write_outputs(
        records, summary, model, args.out,
        diagnostics=diag, real_counts=real_counts, figures=not args.no_figures,
    )
    print(f"{len(records)} vehicle records; wrote {len(written)} files to {args.out}")
    return 0


def cmd_metrics(args) -> int:
    with open(args.pred, "r", encoding="utf-8") as f:
        pred = json.load(f)
    with open(args.truth, "r", encoding="utf-8") as f:
        doc = json.load(f)
    real_counts = doc.get("counts", doc)

    est: dict = {}
    for row in pred.get("counts", []):
        key = (int(row["direction"]), row["class"])
        est[key] = est.get(key, 0) + int(row["count"])

    print(f"{'direction':>9} {'class':>14} {'estimated':>9} {'real':>6} {'ER%':>8}")
    worst = 0.0
    for d_str in sorted(real_counts):
        for cls in sorted(real_counts[d_str]):
            real = int(real_counts[d_str][cls])
            got = est.get((int(d_str), cls), 0)
            er = error_rate(got, real)
            worst = max(worst, er)
            print(f"{d_str:>9} {cls:>14} {got:>9} {real:>6} {er:>8.2f}")
    print(f"worst ER%: {worst:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trafficbev",
        description="Traffic analytics from per-frame vehicle detections via BEV homography.",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the synth spec seed")
    parser.add_argument("--frames-dir", default=None, help="directory of frame_%%06d.pgm files")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="fit the pixel-to-world calibration model")
    p.add_argument("--detections", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("track", help="project detections to BEV, track, and stitch")
    p.add_argument("--detections", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--tracker", choices=["motpy", "byte"], default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("analyze", help="traffic parameters and report files from tracks")
    p.add_argument("--tracks", required=True, help="tracks.json or the track output directory")
    p.add_argument("--calibration", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--real-counts", default=None, help="manual counts for ER%% reporting")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("metrics", help="count error rates of a summary against manual counts")
    p.add_argument("--pred", required=True, help="summary.json from analyze")
    p.add_argument("--truth", required=True, help="JSON {direction: {class: count}}")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
