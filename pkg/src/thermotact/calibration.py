"""Brightness-to-temperature curve and linear force gains.

A calibration file is one JSON document::

    {"schema": 1,
     "temp_curve": [[T_C, brightness], ...],
     "pressure_gain": {"slope": ..., "intercept": ..., "r2": ...} | null,
     "shear_gain": {...} | null,
     "units": {...}, "metadata": {...}}
"""

from __future__ import annotations

import enum
import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

__all__ = [
    "TempFlag",
    "CalibrationError",
    "CalibrationSample",
    "LinearGain",
    "TemperatureCurve",
    "CalibrationModel",
    "isotonic_regression",
    "fit_temperature_curve",
    "fit_linear_gain",
    "invert_temperature",
    "truth_samples",
]

SCHEMA = 1
KINDS = ("temperature", "pressure", "shear")
STIMULUS_RANGE = {"temperature": (20.0, 250.0), "pressure": (0.0, 50.0), "shear": (0.0, 20.0)}


class CalibrationError(ValueError):
    pass


class TempFlag(enum.IntEnum):
    IN_RANGE = 0
    BELOW_RANGE = 1
    AMBIGUOUS_ABOVE_PEAK = 2

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")


@dataclass(frozen=True)
class CalibrationSample:
    kind: str
    stimulus: float
    response: float
    repeat_index: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CalibrationError(f"unknown sample kind {self.kind!r}")
        lo, hi = STIMULUS_RANGE[self.kind]
        if not lo <= self.stimulus <= hi:
            raise CalibrationError(f"{self.kind} stimulus {self.stimulus} outside [{lo}, {hi}]")
        if not np.isfinite(self.response):
            raise CalibrationError("sample response must be finite")


@dataclass(frozen=True)
class LinearGain:
    """Affine response model ``response = slope * stimulus + intercept``."""

    slope: float
    intercept: float
    r2: float

    @property
    def decode_gain(self) -> float:
        return 1.0 / self.slope

    def stimulus_for(self, response):
        return (np.asarray(response) - self.intercept) / self.slope

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2}


def isotonic_regression(values: Sequence[float], weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit (pool adjacent violators)."""
    y = np.asarray(values, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if y.shape != w.shape:
        raise ValueError("values and weights must have the same length")
    if (w <= 0).any():
        raise ValueError("weights must be positive")
    # each block: [weighted mean, total weight, length]
    means: list[float] = []
    wts: list[float] = []
    lens: list[int] = []
    for yi, wi in zip(y, w):
        means.append(yi)
        wts.append(wi)
        lens.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, n2 = means.pop(), wts.pop(), lens.pop()
            total = wts[-1] + w2
            means[-1] = (means[-1] * wts[-1] + m2 * w2) / total
            wts[-1] = total
            lens[-1] += n2
    return np.repeat(means, lens)


@njit(cache=True, nogil=True)
def _invert_kernel(b, rb, rt, ambiguous_from, below_under):
    n = b.shape[0]
    temps = np.empty(n, b.dtype)
    flags = np.empty(n, np.uint8)
    last = rb.shape[0] - 1
    for i in range(n):
        x = b[i]
        if x < below_under:
            flags[i] = 1
        elif x >= ambiguous_from:
            flags[i] = 2
        else:
            flags[i] = 0
        if x <= rb[0]:
            temps[i] = rt[0]
        elif x >= rb[last]:
            temps[i] = rt[last]
        else:
            lo = 0
            hi = last
            while hi - lo > 1:
                mid = (lo + hi) >> 1
                if rb[mid] <= x:
                    lo = mid
                else:
                    hi = mid
            temps[i] = rt[lo] + (x - rb[lo]) * (rt[hi] - rt[lo]) / (rb[hi] - rb[lo])
    return temps, flags


@dataclass(frozen=True)
class TemperatureCurve:
    """Knotted brightness curve; inverted on its rising branch only."""

    temps: np.ndarray
    brightness: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.temps, dtype=float)
        b = np.asarray(self.brightness, dtype=float)
        object.__setattr__(self, "temps", t)
        object.__setattr__(self, "brightness", b)
        if t.ndim != 1 or t.shape != b.shape or t.size < 2:
            raise CalibrationError("temperature curve needs at least two (T, B) knots")
        if not (np.diff(t) > 0).all():
            raise CalibrationError("knot temperatures must be strictly increasing")
        if t[-1] - t[0] < 20.0:
            raise CalibrationError("knots must span at least 20 C")
        if not np.isfinite(b).all():
            raise CalibrationError("knot brightness must be finite")
        p = self.peak_index
        if (np.diff(b[:p + 1]) < 0).any():
            raise CalibrationError("knot brightness must be non-decreasing up to the peak")
        if p == 0:
            raise CalibrationError("curve has no rising branch")

    @property
    def peak_index(self) -> int:
        return int(np.argmax(self.brightness))

    @property
    def peak_temperature(self) -> float:
        return float(self.temps[self.peak_index])

    @property
    def peak_brightness(self) -> float:
        return float(self.brightness[self.peak_index])

    @property
    def ambiguity_floor(self) -> float:
        """Lowest brightness reachable above the peak temperature.

        Any brightness at or above it can come from either side of the peak.
        """
        tail = self.brightness[self.peak_index + 1:]
        if tail.size == 0:
            return self.peak_brightness
        return float(max(tail.min(), self.brightness[0]))

    def brightness_at(self, temperature_c):
        out = np.interp(temperature_c, self.temps, self.brightness)
        return float(out) if np.ndim(out) == 0 else out

    def _rising(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.peak_index
        b, t = self.brightness[:p + 1], self.temps[:p + 1]
        # collapse plateaus so the inverse is single-valued
        ub, inv = np.unique(b, return_inverse=True)
        ut = np.bincount(inv, weights=t) / np.bincount(inv)
        return ub, ut

    def invert(self, brightness, margin: float = 0.0):
        """Vectorised inverse: returns ``(temperature_C, flags)`` arrays.

        Brightness is read on the rising branch and clamped to its ends, so
        values below the first knot come back as its temperature. Values at
        or above the lowest post-peak brightness are flagged ambiguous and
        values below the first knot below-range. ``margin`` widens both flag
        bands by a guard amount of brightness without changing the values;
        0 applies the bare knot values.
        """
        b = np.asarray(brightness)
        dtype = np.float32 if b.dtype == np.float32 else np.float64
        rb, rt = self._rising()
        flat = np.ascontiguousarray(b, dtype=dtype).ravel()
        temps, flags = _invert_kernel(flat, rb, rt, dtype(self.ambiguity_floor - margin), dtype(rb[0] + margin))
        return temps.reshape(b.shape), flags.reshape(b.shape)

    def knot_pairs(self) -> list[list[float]]:
        return [[float(t), float(b)] for t, b in zip(self.temps, self.brightness)]


def invert_temperature(brightness: float, curve: TemperatureCurve, margin: float = 0.0) -> tuple[float, TempFlag]:
    temps, flags = curve.invert(np.asarray([brightness], dtype=float), margin)
    return float(temps[0]), TempFlag(int(flags[0]))


def _group(samples: Iterable[CalibrationSample], kind: str) -> dict[float, list[float]]:
    groups: dict[float, list[float]] = defaultdict(list)
    for s in samples:
        if s.kind == kind:
            groups[float(s.stimulus)].append(float(s.response))
    return groups


def fit_temperature_curve(samples: Iterable[CalibrationSample]) -> TemperatureCurve:
    """Per-temperature mean brightness, made monotone on each side of the peak.

    The rising branch up to the brightest knot is projected onto
    non-decreasing sequences; the knots after it onto non-increasing ones.
    """
    groups = _group(samples, "temperature")
    if len(groups) < 2:
        raise CalibrationError("need samples at two or more distinct temperatures")
    temps = np.array(sorted(groups))
    means = np.array([np.mean(groups[t]) for t in temps])
    counts = np.array([len(groups[t]) for t in temps], dtype=float)
    if np.ptp(means) == 0:
        raise CalibrationError("all temperature responses are identical; a flat curve cannot be inverted")
    p = int(np.argmax(means))
    if p == 0:
        raise CalibrationError("brightness never rises above the lowest temperature sample")
    knots = means.copy()
    knots[:p + 1] = isotonic_regression(means[:p + 1], counts[:p + 1])
    if p + 1 < len(means):
        knots[p + 1:] = -isotonic_regression(-means[p + 1:], counts[p + 1:])
        # the falling branch may not overtake the peak
        knots[p + 1:] = np.minimum(knots[p + 1:], knots[p])
    return TemperatureCurve(temps, knots)


def fit_linear_gain(samples: Iterable[CalibrationSample], kind: Optional[str] = None) -> LinearGain:
    """Ordinary least squares of response on stimulus, with intercept."""
    samples = [s for s in samples if kind is None or s.kind == kind]
    x = np.array([s.stimulus for s in samples], dtype=float)
    y = np.array([s.response for s in samples], dtype=float)
    if np.unique(x).size < 2:
        raise CalibrationError("need two or more distinct stimulus values for a linear fit")
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float((resid ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return LinearGain(float(slope), float(intercept), float(r2))


def truth_samples(curve, temps: Optional[Sequence[float]] = None) -> list[CalibrationSample]:
    """Noise-free temperature samples of a simulator ``TruthCurve``."""
    from .sensor import brightness_of

    if temps is None:
        temps = np.arange(50.0, 200.0 + 1e-9, 5.0)
    return [CalibrationSample("temperature", float(t), brightness_of(float(t), curve)) for t in temps]


@dataclass
class CalibrationModel:
    temp_curve: Optional[TemperatureCurve] = None
    pressure_gain: Optional[LinearGain] = None
    shear_gain: Optional[LinearGain] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("pressure_gain", "shear_gain"):
            g = getattr(self, name)
            if g is None:
                continue
            if not (np.isfinite(g.slope) and np.isfinite(g.intercept)):
                raise CalibrationError(f"{name} must be finite")
            if g.slope <= 0:
                raise CalibrationError(f"{name} slope must be positive, got {g.slope:g}")

    @classmethod
    def fit(cls, samples: Sequence[CalibrationSample], source: str = "samples") -> "CalibrationModel":
        samples = list(samples)
        kinds = {s.kind for s in samples}
        curve = fit_temperature_curve(samples) if "temperature" in kinds else None
        pressure = fit_linear_gain(samples, "pressure") if "pressure" in kinds else None
        shear = fit_linear_gain(samples, "shear") if "shear" in kinds else None
        counts = {k: sum(1 for s in samples if s.kind == k) for k in KINDS}
        return cls(curve, pressure, shear, {"source": source, "sample_counts": counts})

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "temp_curve": self.temp_curve.knot_pairs() if self.temp_curve is not None else None,
            "pressure_gain": self.pressure_gain.to_dict() if self.pressure_gain else None,
            "shear_gain": self.shear_gain.to_dict() if self.shear_gain else None,
            "units": {"temperature": "degC", "brightness": "intensity [0,1]",
                      "pressure_stimulus": "N", "pressure_response": "sum of positive cell-area change rates",
                      "shear_stimulus": "N", "shear_response": "sum of marker displacement magnitudes [px]"},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationModel":
        if data.get("schema") != SCHEMA:
            raise CalibrationError(f"unsupported calibration schema {data.get('schema')!r}")
        knots = data.get("temp_curve")
        curve = None
        if knots:
            arr = np.asarray(knots, dtype=float)
            curve = TemperatureCurve(arr[:, 0], arr[:, 1])

        def gain(d):
            return None if d is None else LinearGain(float(d["slope"]), float(d["intercept"]), float(d["r2"]))

        return cls(curve, gain(data.get("pressure_gain")), gain(data.get("shear_gain")),
                   dict(data.get("metadata", {})))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CalibrationModel":
        if not os.path.exists(path):
            raise CalibrationError(f"calibration file not found: {path}")
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
