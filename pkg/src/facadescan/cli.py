"""Command line front end.

Subcommands mirror the pipeline's stage boundaries:

* ``pipeline``: full survey run from a sequence config to metrics,
  report, and diagnostics.
* ``synth``: generate a synthetic dataset with ground truth.
* ``eval``: score a detections file against an annotations file.
* ``report``: re-render the panorama SVG from a metrics JSON.

Exit codes: 0 success, 2 invalid input (bad files, bad parameters),
3 processing failure. Errors are printed to stderr as one JSON object
``{"error": <class>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import INPUT_ERRORS, ConfigError, FacadeScanError
from .ingest import load_detections
from .pipeline import RunConfig, run_pipeline, summary_line, write_outputs
from .postprocess import MatchParams, eval_detection_sets
from .report import render_report
from .synth import FacadeLayout, corrupt_detections, gen_sequence, plan_for_layout, write_sequence

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facadescan",
        description="Offline UAV facade survey: window and storey metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="run the full pipeline on a sequence")
    p.add_argument("--config", required=True, type=Path,
                   help="sequence config JSON")
    p.add_argument("--out", type=Path, default=None,
                   help="output directory (metrics.json, report.svg, diagnostics.json)")
    p.add_argument("--skip-postprocess", action="store_true",
                   help="map raw detections without template-matching completion")
    p.add_argument("--pixel-x", action="store_true",
                   help="keep horizontal plane coordinates in raw pixels")
    p.add_argument("--sync", choices=("linear", "nearest"), default="linear",
                   help="pose interpolation mode (default linear)")
    p.add_argument("--ncc-threshold", type=float, default=0.80)
    p.add_argument("--strip-margin", type=float, default=0.5)
    p.add_argument("--nms-iou", type=float, default=0.3)
    p.add_argument("--peak-min-separation", type=float, default=None)
    p.add_argument("--context-pad", type=float, default=0.25)
    p.add_argument("--dedup-iou", type=float, default=0.3)
    p.add_argument("--band-overlap", type=float, default=0.5)
    p.add_argument("--wall-margin", type=float, default=0.5,
                   help="auto-extent wall margin in meters")
    p.add_argument("--extent", nargs=2, type=float, metavar=("W_M", "H_M"),
                   default=None, help="user-supplied facade extent in meters")

    s = sub.add_parser("synth", help="generate a synthetic survey dataset")
    s.add_argument("--out", required=True, type=Path, help="dataset directory")
    s.add_argument("--storeys", type=int, required=True)
    s.add_argument("--windows", type=int, required=True,
                   help="windows per storey")
    s.add_argument("--frames", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dropout", type=float, default=0.0,
                   help="per-box dropout probability for detections.json")
    s.add_argument("--jitter", type=float, default=0.0,
                   help="corner jitter sigma in pixels")
    s.add_argument("--pitch-noise", type=float, default=0.0,
                   help="per-frame pitch sigma in radians")
    s.add_argument("--noise-levels", type=int, default=0,
                   help="additive uniform image noise amplitude")
    s.add_argument("--depth", type=float, default=5.0)
    s.add_argument("--px-per-m", type=float, default=18.0)
    s.add_argument("--height-px", type=int, default=130)
    s.add_argument("--window-w", type=float, default=1.2)
    s.add_argument("--window-h", type=float, default=1.5)
    s.add_argument("--h-gap", type=float, default=0.5)
    s.add_argument("--v-gap", type=float, default=0.5)
    s.add_argument("--sill", type=float, default=0.8)
    s.add_argument("--storey-step", type=float, default=0.0,
                   help="per-storey window intensity step (failure-mode demo)")

    e = sub.add_parser("eval", help="score detections against annotations")
    e.add_argument("--pred", required=True, type=Path, help="detections JSON")
    e.add_argument("--truth", required=True, type=Path, help="annotations JSON")
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--out", type=Path, default=None, help="write metrics JSON here")

    r = sub.add_parser("report", help="render the panorama SVG from metrics JSON")
    r.add_argument("--metrics", required=True, type=Path)
    r.add_argument("--out", required=True, type=Path)
    return parser


def cmd_pipeline(args) -> int:
    extent_w, extent_h = (args.extent if args.extent is not None else (None, None))
    cfg = RunConfig(
        config_path=args.config,
        out_dir=args.out,
        match=MatchParams(
            ncc_threshold=args.ncc_threshold,
            strip_margin=args.strip_margin,
            nms_iou=args.nms_iou,
            peak_min_separation=args.peak_min_separation,
            context_pad=args.context_pad,
        ),
        dedup_iou=args.dedup_iou,
        band_overlap_min=args.band_overlap,
        wall_margin_m=args.wall_margin,
        extent_w_m=extent_w,
        extent_h_m=extent_h,
        pixel_x=args.pixel_x,
        sync_mode=args.sync,
        skip_postprocess=args.skip_postprocess,
    )
    result = run_pipeline(cfg)
    if args.out is not None:
        write_outputs(result, args.out)
    print(summary_line(result))
    return 0


def cmd_synth(args) -> int:
    layout = FacadeLayout(
        storeys=args.storeys,
        windows_per_storey=args.windows,
        window_w_m=args.window_w,
        window_h_m=args.window_h,
        h_gap_m=args.h_gap,
        v_gap_m=args.v_gap,
        sill_m=args.sill,
        storey_intensity_step=args.storey_step,
    )
    plan = plan_for_layout(
        layout,
        depth_m=args.depth,
        px_per_m=args.px_per_m,
        height_px=args.height_px,
        pitch_noise_sigma_rad=args.pitch_noise,
        noise_levels=args.noise_levels,
        seed=args.seed,
        frame_count=args.frames,
    )
    dataset = gen_sequence(layout, plan)
    detections = None
    if args.dropout > 0 or args.jitter > 0:
        detections = corrupt_detections(dataset.truth, args.dropout, args.jitter,
                                        seed=args.seed, camera=plan.camera)
    config_path = write_sequence(dataset, args.out, detections)
    print(str(config_path))
    return 0


def _fmt_metric(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def cmd_eval(args) -> int:
    for path in (args.pred, args.truth):
        if not path.is_file():
            raise ConfigError(f"file not found: {path}")
    pred = load_detections(args.pred.read_text(encoding="utf-8"))
    truth = load_detections(args.truth.read_text(encoding="utf-8"))
    per_frame, pooled = eval_detection_sets(pred, truth, args.iou)

    rows = [("frame", "prec", "recall", "acc%", "ap", "pred", "truth")]
    for frame_id in sorted(per_frame):
        r = per_frame[frame_id]
        rows.append((frame_id, _fmt_metric(r.precision), _fmt_metric(r.recall),
                     _fmt_metric(r.accuracy_pct), _fmt_metric(r.ap),
                     str(r.n_predicted), str(r.n_truth)))
    rows.append(("ALL", _fmt_metric(pooled.precision), _fmt_metric(pooled.recall),
                 _fmt_metric(pooled.accuracy_pct), _fmt_metric(pooled.ap),
                 str(pooled.n_predicted), str(pooled.n_truth)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())

    if args.out is not None:
        def as_doc(r):
            return {"precision": r.precision, "recall": r.recall,
                    "accuracy_pct": r.accuracy_pct, "ap": r.ap,
                    "matched": r.matched, "n_predicted": r.n_predicted,
                    "n_truth": r.n_truth}

        doc = {"match_iou": args.iou,
               "frames": {fid: as_doc(r) for fid, r in sorted(per_frame.items())},
               "aggregate": as_doc(pooled)}
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_report(args) -> int:
    if not args.metrics.is_file():
        raise ConfigError(f"metrics file not found: {args.metrics}")
    try:
        doc = json.loads(args.metrics.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.metrics}: malformed JSON: {exc}") from None
    svg = render_report(doc)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(svg, encoding="utf-8")
    print(str(args.out))
    return 0


_COMMANDS = {
    "pipeline": cmd_pipeline,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "report": cmd_report,
}


def _fail(exc: BaseException, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FacadeScanError as exc:
        return _fail(exc, 2 if isinstance(exc, INPUT_ERRORS) else 3)
    except (ValueError, OSError) as exc:
        return _fail(exc, 2)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        return _fail(exc, 3)


if __name__ == "__main__":
    sys.exit(main())
