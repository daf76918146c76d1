"""Command-line front end: simulate, decode, calibrate, eval."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import export
from .calibration import CalibrationModel
from .evaluation import ALIASES, PROTOCOLS, EvalReport, eval_closed_loop
from .pipeline import Decoder, run_decode_pipeline
from .sensor import ContactScenario, render_frame


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    config = export.load_config(args.config)
    scenarios = export.load_scenarios(args.scenario)
    n = args.frames if args.frames is not None else len(scenarios)
    if n < 1:
        raise ValueError("--frames must be >= 1")
    out = _out_dir(args.out)
    first = scenarios[0]
    for s in scenarios:
        s.validate(config)
    index = 0
    if not args.no_rest:
        rest = ContactScenario(pixel_noise_sigma=first.pixel_noise_sigma, rng_seed=first.rng_seed + 7919)
        export.write_frame(render_frame(rest, config), out / f"frame_{index:04d}.{args.format}")
        index += 1
    truth = []
    for i in range(n):
        base = scenarios[min(i, len(scenarios) - 1)]
        scenario = base.with_seed(base.rng_seed + i)
        export.write_frame(render_frame(scenario, config), out / f"frame_{index:04d}.{args.format}")
        truth.append(dict(scenario.to_dict(), frame=index))
        index += 1
    export.save_json({"config": config.to_dict(), "frames": truth, "rest_frame": not args.no_rest},
                     out / "truth.json")
    print(f"wrote {index} frames to {out}")
    return 0


def cmd_decode(args) -> int:
    config = export.load_config(args.config)
    calib = CalibrationModel.load(args.calib) if args.calib else None
    paths = export.list_frames(args.frames)
    if not paths:
        raise FileNotFoundError(f"no .png/.pgm frames in {args.frames}")
    frames = [export.read_frame(p) for p in paths]
    reference = export.read_frame(args.ref) if args.ref else None
    bundles = run_decode_pipeline(frames, calib, config, raw=args.raw, reference=reference,
                                  workers=args.workers)
    out = _out_dir(args.out)
    shape = (config.frame_height_px, config.frame_width_px)
    timing = []
    for b in bundles:
        tag = f"{b.frame_id:04d}"
        export.write_markers_csv(b.markers, out / f"markers_{tag}.csv")
        export.write_displacement_csv(b.displacement, out / f"disp_{tag}.csv")
        export.write_temperature_csv(b.temperature, out / f"temp_{tag}.csv")
        export.write_image(export.temperature_heatmap(b.temperature, shape), out / f"temp_{tag}.png")
        export.write_pressure_csv(b.pressure, out / f"pressure_{tag}.csv")
        export.write_image(b.pressure.render_gray(shape), out / f"pressure_{tag}.png")
        export.write_shear_csv(b.shear, out / f"shear_{tag}.csv")
        export.write_image(export.shear_quiver(b.shear, shape), out / f"shear_{tag}.png")
        timing.append(dict(b.timing, frame=b.frame_id, source=paths[b.frame_id].name))
    totals = [t["total"] for t in timing]
    export.save_json({"frames": timing, "median_total_ms": float(np.median(totals))}, out / "timing.json")
    print(f"decoded {len(bundles)} frames into {out}; median decode {np.median(totals):.2f} ms")
    return 0


def cmd_calibrate(args) -> int:
    samples = export.read_sample_dir(args.samples)
    model = CalibrationModel.fit(samples, source=str(args.samples))
    model.save(args.out)
    fitted = [n for n in ("temp_curve", "pressure_gain", "shear_gain") if getattr(model, n) is not None]
    print(f"fitted {', '.join(fitted)} from {len(samples)} samples -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    config = export.load_config(args.config)
    report = EvalReport()
    for protocol in args.protocol:
        eval_closed_loop(protocol, config, seeds=args.seeds, report=report)
    report.save(args.out)
    if args.samples_out:
        out = _out_dir(args.samples_out)
        by_kind = {}
        for s in report.samples:
            by_kind.setdefault(s.kind, []).append(s)
        for kind, rows in by_kind.items():
            export.write_samples(rows, out / f"{kind}.csv")
    print(json.dumps(_summary(report), indent=2))
    return 0


def _summary(report: EvalReport) -> dict:
    keep = ("monotonic", "ordering_violations", "mae_c", "r2_min", "slope_spread", "direction_error_max_deg",
            "marker_recall", "latency_median_ms")
    return {name: {k: v for k, v in entry.items() if k in keep} for name, entry in report.entries.items()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermotact", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render synthetic frames from a scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON (single or {\"sequence\": [...]})")
    p.add_argument("--config", help="sensor config JSON (defaults if omitted)")
    p.add_argument("--frames", type=int, help="number of scenario frames (default: sequence length)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("png", "pgm"), default="png")
    p.add_argument("--no-rest", action="store_true", help="do not prepend a contact-free rest frame")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decode", help="decode a directory of frames")
    p.add_argument("--frames", required=True, help="directory of .png/.pgm frames, sorted by name")
    p.add_argument("--calib", help="calibration JSON")
    p.add_argument("--raw", action="store_true", help="emit rates and displacements without gains")
    p.add_argument("--ref", help="rest frame to use instead of the first frame")
    p.add_argument("--config", help="sensor config JSON")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("calibrate", help="fit a calibration model from sample CSVs")
    p.add_argument("--samples", required=True, help="directory of kind,stimulus,response,repeat_index CSVs")
    p.add_argument("--out", required=True, help="calibration JSON to write")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="closed-loop characterisation in simulation")
    p.add_argument("--protocol", required=True, action="append",
                   choices=sorted(set(PROTOCOLS) | set(ALIASES)), help="may be repeated")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--config", help="sensor config JSON")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--samples-out", help="also write the measured calibration samples here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"thermotact {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
