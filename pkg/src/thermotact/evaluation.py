"""Closed-loop characterisation: simulate a protocol, decode, score against truth."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .calibration import (CalibrationModel, CalibrationSample, TempFlag, fit_temperature_curve,
                          truth_samples)
from .markers import MarkerSet, track_markers
from .pipeline import Decoder, DecoderParams, STAGES
from .sensor import (ContactPrimitive, ContactScenario, SensorConfig, TruthCurve, footprint_weight,
                     marker_centers_px, render_frame)

__all__ = [
    "PROTOCOLS",
    "EvalReport",
    "grid_points_mm",
    "linear_fit",
    "temperature_sweep",
    "pressure_ramp",
    "shear_ramp",
    "marker_recall",
    "decode_latency",
    "eval_closed_loop",
]

SWEEP_TEMPS = tuple(float(t) for t in range(50, 201, 5))
RAMP_FORCES = tuple(float(f) for f in range(1, 9))
SHEAR_FORCES = (0.2, 0.4, 0.6, 0.8, 1.0)
# pixel masks for scoring: footprint core and clearly-outside region
CORE_WEIGHT = 0.999
OUTSIDE_WEIGHT = 1e-3


def grid_points_mm(config: SensorConfig = SensorConfig(), n: int = 5, inset_mm: float = 5.0) -> np.ndarray:
    """``n x n`` probe positions spread evenly over the field, ``inset_mm`` from its edges."""
    fw, fh = config.sensing_field_mm
    xs = np.linspace(inset_mm, fw - inset_mm, n)
    ys = np.linspace(inset_mm, fh - inset_mm, n)
    return np.array([(x, y) for y in ys for x in xs])


def linear_fit(x, y) -> tuple[float, float, float]:
    """OLS ``y = slope * x + intercept``; returns ``(slope, intercept, r2)``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 0.0
    return float(slope), float(intercept), r2


def _spread(values) -> dict:
    v = np.asarray(values, float)
    return {"mean": float(v.mean()), "std": float(v.std()), "min": float(v.min()), "max": float(v.max())}


def _truth_calibration(curve: TruthCurve) -> CalibrationModel:
    return CalibrationModel(fit_temperature_curve(truth_samples(curve)), metadata={"source": "truth curve"})


def _crop(image: np.ndarray, origin, shape) -> np.ndarray:
    x0, y0 = origin
    return image[y0:y0 + shape[0], x0:x0 + shape[1]]


def _decoder(config, calib, noise, seed, params=DecoderParams()) -> Decoder:
    dec = Decoder(config, calib, raw=True, params=params)
    dec.set_reference(render_frame(ContactScenario(pixel_noise_sigma=noise, rng_seed=seed), config))
    return dec


@dataclass
class EvalReport:
    """Metrics per protocol; each entry also keeps its settings and per-seed rows."""

    entries: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)

    def add(self, protocol: str, entry: dict, samples: Sequence[CalibrationSample] = ()) -> None:
        self.entries[protocol] = entry
        self.samples.extend(samples)

    def to_dict(self) -> dict:
        return {"protocols": self.entries}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def temperature_sweep(config: SensorConfig = SensorConfig(), seeds: Sequence[int] = range(5),
                      temps: Sequence[float] = SWEEP_TEMPS, noise: float = 0.01, side_mm: float = 10.0,
                      curve: TruthCurve = TruthCurve(), calib: Optional[CalibrationModel] = None) -> tuple[dict, list]:
    """Heated square pressed at the field centre, stepped through ``temps``.

    Scores the mean decoded brightness in the footprint core (ordering),
    the per-pixel temperature error on the rising branch and the range flags.
    """
    calib = calib or _truth_calibration(curve)
    peak = float(calib.temp_curve.peak_temperature)
    centre = (config.sensing_field_mm[0] / 2, config.sensing_field_mm[1] / 2)
    rows, samples = [], []
    for seed in seeds:
        dec = _decoder(config, calib, noise, 10_000 + seed)
        means, errors, amb_frac, outside_below = [], [], [], []
        for i, t in enumerate(temps):
            contact = ContactPrimitive(centre, "square", side_mm, temperature_c=float(t))
            frame = render_frame(ContactScenario((contact,), noise, seed * 1000 + i), config)
            field_ = dec.decode(frame, i).temperature
            weight = _crop(footprint_weight(contact, config), field_.origin, field_.shape)
            core = weight >= CORE_WEIGHT
            outside = weight <= OUTSIDE_WEIGHT
            mean_b = float(field_.brightness[core].mean())
            means.append(mean_b)
            samples.append(CalibrationSample("temperature", float(t), mean_b, int(seed)))
            if t <= peak:
                errors.append(np.abs(field_.values[core] - t))
            else:
                amb_frac.append(field_.fraction_flagged(TempFlag.AMBIGUOUS_ABOVE_PEAK, core))
            outside_below.append(field_.fraction_flagged(TempFlag.BELOW_RANGE, outside))
        means = np.array(means)
        t_arr = np.asarray(temps)
        rising = means[t_arr <= peak]
        falling = means[t_arr >= peak]
        violations = int((np.diff(rising) <= 0).sum() + (np.diff(falling) >= 0).sum())
        rows.append({
            "seed": int(seed),
            "mean_brightness": means.tolist(),
            "ordering_violations": violations,
            "mae_c": float(np.concatenate(errors).mean()),
            "ambiguous_fraction_above_peak": float(min(amb_frac)) if amb_frac else 1.0,
            "below_range_fraction_outside": float(min(outside_below)),
        })
    return {
        "protocol": "temperature-sweep",
        "settings": {"temps_c": list(map(float, temps)), "noise_sigma": noise, "side_mm": side_mm,
                     "seeds": [int(s) for s in seeds]},
        "ordering_violations": int(sum(r["ordering_violations"] for r in rows)),
        "monotonic": all(r["ordering_violations"] == 0 for r in rows),
        "mae_c": _spread([r["mae_c"] for r in rows]),
        "ambiguous_fraction_above_peak": float(min(r["ambiguous_fraction_above_peak"] for r in rows)),
        "below_range_fraction_outside": float(min(r["below_range_fraction_outside"] for r in rows)),
        "per_seed": rows,
    }, samples


def _jittered(points: np.ndarray, seed: int, jitter_mm: float) -> np.ndarray:
    if jitter_mm <= 0:
        return points
    rng = np.random.default_rng(20_000 + seed)
    return points + rng.uniform(-jitter_mm, jitter_mm, points.shape)


def _ramp(config, seeds, forces, jitter_mm, radius_mm, scenario_for: Callable, score: Callable,
          calib=None, noise: float = 0.0):
    calib = calib or _truth_calibration(TruthCurve())
    per_seed = []
    for seed in seeds:
        dec = _decoder(config, calib, noise, 30_000 + seed)
        points = _jittered(grid_points_mm(config), seed, jitter_mm)
        per_point = []
        for j, p in enumerate(points):
            readings = []
            for i, f in enumerate(forces):
                contact = scenario_for(tuple(p), float(f), radius_mm)
                frame = render_frame(ContactScenario((contact,), noise, seed * 100_000 + j * 100 + i), config)
                readings.append(score(dec.decode(frame), contact))
            per_point.append(readings)
        per_seed.append((points, per_point))
    return per_seed


def pressure_ramp(config: SensorConfig = SensorConfig(), seeds: Sequence[int] = range(3),
                  forces: Sequence[float] = RAMP_FORCES, radius_mm: float = 1.5, jitter_mm: float = 0.1,
                  noise: float = 0.0, calib: Optional[CalibrationModel] = None) -> tuple[dict, list]:
    """Disk probe pressed at each of the 25 grid points with a stepped normal force.

    The response is the summed positive cell-area change rate; each point's
    response-vs-force line is fitted separately.
    """
    def contact(p, f, r):
        return ContactPrimitive(p, "disk", r, normal_force_n=f)

    def score(bundle, _):
        return float(np.maximum(bundle.pressure.rates, 0.0).sum())

    runs = _ramp(config, seeds, forces, jitter_mm, radius_mm, contact, score, calib, noise)
    rows, samples, all_r2 = [], [], []
    for seed, (points, per_point) in zip(seeds, runs):
        fits = [linear_fit(forces, readings) for readings in per_point]
        slopes = np.array([f[0] for f in fits])
        r2 = np.array([f[2] for f in fits])
        all_r2.extend(r2.tolist())
        rows.append({
            "seed": int(seed),
            "points_mm": points.tolist(),
            "slopes": slopes.tolist(),
            "r2": r2.tolist(),
            "slope_spread": float((slopes.max() - slopes.min()) / slopes.mean()),
            "slope_max_deviation": float(np.abs(slopes / slopes.mean() - 1).max()),
        })
        for readings in per_point:
            samples.extend(CalibrationSample("pressure", float(f), v, int(seed)) for f, v in zip(forces, readings))
    return {
        "protocol": "pressure-ramp",
        "settings": {"forces_n": list(map(float, forces)), "radius_mm": radius_mm, "jitter_mm": jitter_mm,
                     "noise_sigma": noise, "seeds": [int(s) for s in seeds]},
        "r2_min": float(min(all_r2)),
        "r2": _spread(all_r2),
        "slope_spread": _spread([r["slope_spread"] for r in rows]),
        "slope_max_deviation": _spread([r["slope_max_deviation"] for r in rows]),
        "per_seed": rows,
    }, samples


def shear_ramp(config: SensorConfig = SensorConfig(), seeds: Sequence[int] = range(3),
               forces: Sequence[float] = SHEAR_FORCES, direction_deg: float = 0.0, normal_n: float = 1.0,
               radius_mm: float = 1.5, jitter_mm: float = 0.1, noise: float = 0.0,
               calib: Optional[CalibrationModel] = None) -> tuple[dict, list]:
    """Disk probe held at ``normal_n`` and dragged with a stepped tangential force.

    The response is the summed marker displacement magnitude; direction is
    read from the mean displacement vector.
    """
    unit = np.array([math.cos(math.radians(direction_deg)), math.sin(math.radians(direction_deg))])

    def contact(p, f, r):
        return ContactPrimitive(p, "disk", r, normal_force_n=normal_n, shear_force_n=tuple(f * unit))

    def score(bundle, _):
        return bundle.shear.displacement_sum_px, bundle.shear.direction_deg

    runs = _ramp(config, seeds, forces, jitter_mm, radius_mm, contact, score, calib, noise)
    rows, samples, all_r2, all_dir = [], [], [], []
    for seed, (points, per_point) in zip(seeds, runs):
        r2s, slopes, dir_err = [], [], []
        for readings in per_point:
            mags = [m for m, _ in readings]
            slope, _, r2 = linear_fit(forces, mags)
            r2s.append(r2)
            slopes.append(slope)
            angles = np.radians([a for _, a in readings])
            mean_angle = math.degrees(math.atan2(np.sin(angles).mean(), np.cos(angles).mean()))
            dir_err.append(abs((mean_angle - direction_deg + 180.0) % 360.0 - 180.0))
            samples.extend(CalibrationSample("shear", float(f), m, int(seed)) for f, m in zip(forces, mags))
        all_r2.extend(r2s)
        all_dir.extend(dir_err)
        rows.append({"seed": int(seed), "points_mm": points.tolist(), "r2": r2s, "slopes": slopes,
                     "direction_error_deg": dir_err})
    return {
        "protocol": "shear-ramp",
        "settings": {"forces_n": list(map(float, forces)), "direction_deg": direction_deg, "normal_n": normal_n,
                     "radius_mm": radius_mm, "jitter_mm": jitter_mm, "noise_sigma": noise,
                     "seeds": [int(s) for s in seeds]},
        "r2_min": float(min(all_r2)),
        "r2": _spread(all_r2),
        "direction_error_deg": _spread(all_dir),
        "direction_error_max_deg": float(max(all_dir)),
        "per_seed": rows,
    }, samples


def marker_recall(config: SensorConfig = SensorConfig(), seeds: Sequence[int] = range(5),
                  noise: float = 0.02, scenario: Optional[ContactScenario] = None) -> dict:
    """Fraction of analytic markers detected within half a pitch, per seed."""
    scenario = scenario or ContactScenario()
    truth = marker_centers_px(scenario, config)
    truth_set = MarkerSet(np.arange(len(truth)), truth, np.zeros(len(truth), np.int64),
                          (config.frame_height_px, config.frame_width_px))
    calib = _truth_calibration(TruthCurve())
    dec = Decoder(config, calib, raw=True)
    rows = []
    for seed in seeds:
        frame = render_frame(ContactScenario(scenario.contacts, noise, 40_000 + seed), config)
        markers, _ = dec.detect(frame)
        match = track_markers(truth_set, markers, config.pitch_px / 2)
        err = np.hypot(*(match.cur_px - match.ref_px).T) if len(match) else np.zeros(0)
        rows.append({"seed": int(seed), "detected": len(markers), "matched": len(match),
                     "recall": len(match) / len(truth),
                     "centroid_error_mean_px": float(err.mean()) if len(err) else float("nan"),
                     "centroid_error_max_px": float(err.max()) if len(err) else float("nan")})
    return {
        "protocol": "marker-recall",
        "settings": {"noise_sigma": noise, "seeds": [int(s) for s in seeds]},
        "recall": _spread([r["recall"] for r in rows]),
        "recall_min": float(min(r["recall"] for r in rows)),
        "per_seed": rows,
    }


def latency_frames(config: SensorConfig = SensorConfig(), n: int = 100, noise: float = 0.01,
                   seed: int = 0) -> list:
    """A press-then-drag sequence with a warm contact, ``n`` frames long."""
    centre = (config.sensing_field_mm[0] / 2, config.sensing_field_mm[1] / 2)
    frames = []
    for i in range(n):
        s = i / max(n - 1, 1)
        force = 6.0 * min(1.0, 2 * s)
        shear = (max(0.0, 2 * s - 1.0), 0.0)
        contact = ContactPrimitive(centre, "square", 10.0, temperature_c=60.0 + 100.0 * s,
                                   normal_force_n=force, shear_force_n=shear)
        frames.append(render_frame(ContactScenario((contact,), noise, seed * 1000 + i), config))
    return frames


def decode_latency(config: SensorConfig = SensorConfig(), n_frames: int = 100, warmup: int = 10,
                   calib: Optional[CalibrationModel] = None, frames: Optional[list] = None,
                   params: DecoderParams = DecoderParams()) -> dict:
    """Median single-frame decode time over ``n_frames`` after ``warmup`` decodes."""
    calib = calib or _truth_calibration(TruthCurve())
    frames = frames if frames is not None else latency_frames(config, n_frames)
    dec = Decoder(config, calib, raw=True, params=params)
    dec.set_reference(render_frame(ContactScenario(pixel_noise_sigma=0.01, rng_seed=99), config))
    for i in range(warmup):
        dec.decode(frames[i % len(frames)])
    timings = []
    for i in range(n_frames):
        t0 = time.perf_counter()
        bundle = dec.decode(frames[i % len(frames)], i)
        wall = (time.perf_counter() - t0) * 1e3
        timings.append(dict(bundle.timing, wall=wall))
    totals = np.array([t["total"] for t in timings])
    return {
        "protocol": "latency",
        "settings": {"frames": n_frames, "warmup": warmup,
                     "width": config.frame_width_px, "height": config.frame_height_px,
                     "crop_to_field": params.crop_to_field},
        "median_ms": float(np.median(totals)),
        "p90_ms": float(np.percentile(totals, 90)),
        "median_wall_ms": float(np.median([t["wall"] for t in timings])),
        "stage_median_ms": {k: float(np.median([t[k] for t in timings])) for k in STAGES},
        "stage_sum_ratio": float(np.median([sum(t[k] for k in STAGES) / t["total"] for t in timings])),
    }


PROTOCOLS = {
    "temperature-sweep": temperature_sweep,
    "pressure-ramp": pressure_ramp,
    "shear-ramp": shear_ramp,
}
ALIASES = {"temp": "temperature-sweep", "temperature": "temperature-sweep",
           "pressure": "pressure-ramp", "shear": "shear-ramp"}


def eval_closed_loop(protocol: str, config: SensorConfig = SensorConfig(), seeds: int = 5,
                     report: Optional[EvalReport] = None, **kwargs) -> EvalReport:
    """Run one protocol over ``seeds`` repeats and add its entry to ``report``."""
    name = ALIASES.get(protocol, protocol)
    if name not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {sorted(set(PROTOCOLS) | set(ALIASES))}")
    if seeds < 1:
        raise ValueError("need at least one seed")
    report = report or EvalReport()
    entry, samples = PROTOCOLS[name](config, seeds=range(seeds), **kwargs)
    entry["marker_recall"] = marker_recall(config, seeds=range(seeds))["recall_min"]
    entry["latency_median_ms"] = decode_latency(config, n_frames=20, warmup=3)["median_ms"]
    report.add(name, entry, samples)
    return report
