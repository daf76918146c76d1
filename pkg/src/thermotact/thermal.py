"""Marker removal and brightness-to-temperature decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import cv2
import numpy as np
from numba import njit

from .boxfilter import box_sum, inverse_counts
from .calibration import CalibrationError, CalibrationModel, TempFlag
from .sensor import GrayFrame, SensorConfig

__all__ = [
    "ThermalParams",
    "TemperatureField",
    "guided_filter",
    "inpaint_mask",
    "fill_mask",
    "marker_free_brightness",
    "decode_temperature",
]


@dataclass(frozen=True)
class ThermalParams:
    # None -> 3 x marker radius in px
    radius_px: Optional[int] = None
    eps: float = 1e-3
    dilate_px: int = 1
    # exclude marker pixels from the guided filter's window statistics
    mask_statistics: bool = True
    inpaint_tol: float = 1e-4
    # guard band (intensity) added to both out-of-range bands of the inversion
    flag_margin: float = 0.01

    def radius_for(self, config: SensorConfig) -> int:
        if self.radius_px is not None:
            return int(self.radius_px)
        return max(1, int(round(3 * config.marker_radius_px)))


@dataclass
class TemperatureField:
    values: np.ndarray
    flags: np.ndarray
    # marker-free brightness the temperatures were read from
    brightness: np.ndarray
    # frame position (x, y) of element [0, 0] when the field covers a crop
    origin: tuple[int, int] = (0, 0)
    # "degC", or "intensity" when no curve was available and values are brightness
    unit: str = "degC"

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def fraction_flagged(self, flag: TempFlag, region: Optional[np.ndarray] = None) -> float:
        f = self.flags if region is None else self.flags[region]
        return float(np.mean(f == flag)) if f.size else 0.0


@njit(cache=True, nogil=True)
def _coefficients(count, s_g, s_gg, s_p, s_gp, eps):
    """Per-window ``a`` and ``b`` from box sums; empty windows give zeros."""
    h, w = count.shape
    a = np.empty_like(s_g)
    b = np.empty_like(s_g)
    for i in range(h):
        for j in range(w):
            c = count[i, j]
            if c <= 0:
                a[i, j] = 0.0
                b[i, j] = 0.0
                continue
            mg = s_g[i, j] / c
            mp = s_p[i, j] / c
            var = s_gg[i, j] / c - mg * mg
            cov = s_gp[i, j] / c - mg * mp
            den = var + eps
            coef = cov / den if den > 0 else 0.0
            a[i, j] = coef
            b[i, j] = mp - coef * mg
    return a, b


@njit(cache=True, nogil=True)
def _combine(sum_a, sum_b, guide, inv_count):
    out = np.empty_like(sum_a)
    h, w = out.shape
    for i in range(h):
        for j in range(w):
            out[i, j] = (sum_a[i, j] * guide[i, j] + sum_b[i, j]) * inv_count[i, j]
    return out


def guided_filter(src: np.ndarray, guide: np.ndarray, radius: int, eps: float,
                  valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Edge-preserving guided filter with clamped square windows of side 2r+1.

    Per window the output is modelled as ``a * guide + b`` with
    ``a = cov(guide, src) / (var(guide) + eps)`` and
    ``b = mean(src) - a * mean(guide)``; each pixel averages the coefficients
    of every window covering it.

    ``valid`` optionally restricts the window statistics to the marked pixels,
    so occluders (markers) do not drag the local means and variances.
    """
    src = np.asarray(src)
    guide = np.asarray(guide)
    if src.shape != guide.shape:
        raise ValueError(f"input {src.shape} and guide {guide.shape} dimensions differ")
    if src.ndim != 2:
        raise ValueError("guided_filter expects 2-D images")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    dtype = np.float32 if src.dtype == np.float32 and guide.dtype == np.float32 else np.float64
    same = guide is src
    g = np.ascontiguousarray(guide, dtype=dtype)
    p = g if same else np.ascontiguousarray(src, dtype=dtype)
    h, w = g.shape
    inv = inverse_counts(h, w, radius, np.dtype(dtype).str)

    if valid is None:
        count = 1.0 / inv
        gw, pw = g, p
    else:
        weight = np.asarray(valid, dtype=dtype)
        if weight.shape != src.shape:
            raise ValueError("valid mask dimensions differ from the input")
        count = box_sum(weight, radius)
        gw = g * weight
        pw = gw if same else p * weight

    s_g = box_sum(gw, radius)
    s_gg = box_sum(gw * g, radius)
    if same:
        s_p, s_gp = s_g, s_gg
    else:
        s_p = box_sum(pw, radius)
        s_gp = box_sum(gw * p, radius)
    a, b = _coefficients(count, s_g, s_gg, s_p, s_gp, dtype(eps))
    return _combine(box_sum(a, radius), box_sum(b, radius), g, inv)


@njit(cache=True, nogil=True, inline="always")
def _relax(flat, p, interior, h, w, omega):
    """One SOR update of pixel ``p``; returns the change applied."""
    here = flat[p]
    if interior:
        target = 0.25 * (flat[p - w] + flat[p + w] + flat[p - 1] + flat[p + 1])
    else:
        y = p // w
        x = p - y * w
        acc = 0.0
        cnt = 0
        if y > 0:
            acc += flat[p - w]
            cnt += 1
        if y < h - 1:
            acc += flat[p + w]
            cnt += 1
        if x > 0:
            acc += flat[p - 1]
            cnt += 1
        if x < w - 1:
            acc += flat[p + 1]
            cnt += 1
        target = acc / cnt
    step = omega * (target - here)
    flat[p] = here + step
    return step


@njit(cache=True, nogil=True)
def _harmonic_fill(img, labels, n_labels, tol, omega, max_iter):
    """In-place fill of ``img`` where ``labels > 0``; returns the most sweeps any region took.

    Distinct 4-connected regions share no boundary pixels, so each is solved
    on its own, starting from the mean of its boundary values, and stops as
    soon as it has converged.
    """
    h, w = img.shape
    flat = img.ravel()
    lab = labels.ravel()
    # counting sort of masked pixels by region; region r owns idx[start[r]:start[r + 1]]
    start = np.zeros(n_labels + 2, np.int64)
    for p in range(h * w):
        if lab[p] > 0:
            start[lab[p] + 1] += 1
    for r in range(1, n_labels + 2):
        start[r] += start[r - 1]
    idx = np.empty(start[n_labels + 1], np.int64)
    interior = np.empty(start[n_labels + 1], np.bool_)
    fill = start.copy()
    for p in range(h * w):
        r = lab[p]
        if r > 0:
            y = p // w
            x = p - y * w
            interior[fill[r]] = 0 < y < h - 1 and 0 < x < w - 1
            idx[fill[r]] = p
            fill[r] += 1

    worst = 0
    for r in range(1, n_labels + 1):
        lo = start[r]
        hi = start[r + 1]
        acc = 0.0
        cnt = 0
        for k in range(lo, hi):
            p = idx[k]
            y = p // w
            x = p - y * w
            if y > 0 and lab[p - w] == 0:
                acc += flat[p - w]
                cnt += 1
            if y < h - 1 and lab[p + w] == 0:
                acc += flat[p + w]
                cnt += 1
            if x > 0 and lab[p - 1] == 0:
                acc += flat[p - 1]
                cnt += 1
            if x < w - 1 and lab[p + 1] == 0:
                acc += flat[p + 1]
                cnt += 1
        init = acc / cnt
        for k in range(lo, hi):
            flat[idx[k]] = init

        sweeps = max_iter
        for it in range(max_iter):
            biggest = 0.0
            for k in range(lo, hi):
                step = abs(_relax(flat, idx[k], interior[k], h, w, omega))
                if step > biggest:
                    biggest = step
            if biggest < tol:
                sweeps = it + 1
                break
        if sweeps > worst:
            worst = sweeps
    return worst


def inpaint_mask(image: np.ndarray, mask: np.ndarray, tol: float = 1e-4,
                 omega: float = 1.4, max_iter: int = 20000) -> np.ndarray:
    """Replace masked pixels by the harmonic (discrete Laplace) fill.

    Each 4-connected masked region starts at the mean of the known pixels
    bordering it and is relaxed towards the mean of its in-image 4-neighbours
    (successive over-relaxation) until the largest per-sweep change drops
    below ``tol``. Unmasked pixels are returned unchanged.
    """
    image = np.asarray(image)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape:
        raise ValueError(f"mask {mask.shape} and image {image.shape} dimensions differ")
    if not mask.any():
        return image.copy()
    if mask.all():
        raise ValueError("mask covers the entire image; nothing to inpaint from")
    if not 0 < omega < 2:
        raise ValueError("omega must lie in (0, 2)")
    dtype = np.float32 if image.dtype == np.float32 else np.float64
    out = np.array(image, dtype=dtype, copy=True)
    n_labels, labels = cv2.connectedComponents(mask.astype(np.uint8), connectivity=4, ltype=cv2.CV_32S)
    _harmonic_fill(out, labels, n_labels - 1, float(tol), float(omega), int(max_iter))
    return out


def _disk(radius: int) -> np.ndarray:
    return cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * radius + 1, 2 * radius + 1))


def fill_mask(marker_mask: np.ndarray, params: ThermalParams = ThermalParams()) -> np.ndarray:
    """The marker mask grown by ``params.dilate_px``: the pixels to inpaint."""
    mask = np.asarray(marker_mask, dtype=np.uint8)
    if params.dilate_px > 0:
        mask = cv2.dilate(mask, _disk(params.dilate_px))
    return mask.astype(bool)


def marker_free_brightness(frame, marker_mask: np.ndarray, config: SensorConfig,
                           params: ThermalParams = ThermalParams()) -> np.ndarray:
    """Guided filter of the frame, then harmonic fill over the dilated marker mask."""
    pixels = frame.pixels if isinstance(frame, GrayFrame) else np.asarray(frame)
    pixels = pixels.astype(np.float32, copy=False)
    mask = fill_mask(marker_mask, params)
    valid = ~mask if params.mask_statistics else None
    smooth = guided_filter(pixels, pixels, params.radius_for(config), params.eps, valid)
    return inpaint_mask(smooth, mask, params.inpaint_tol)


def decode_temperature(frame, marker_mask: np.ndarray, calib: CalibrationModel,
                       config: SensorConfig, params: ThermalParams = ThermalParams()) -> TemperatureField:
    """Temperature field of a raw frame, with per-pixel range flags."""
    if calib is None or calib.temp_curve is None:
        raise CalibrationError("decode_temperature needs a fitted temperature curve")
    brightness = marker_free_brightness(frame, marker_mask, config, params)
    temps, flags = calib.temp_curve.invert(brightness, params.flag_margin)
    return TemperatureField(temps, flags, brightness)
