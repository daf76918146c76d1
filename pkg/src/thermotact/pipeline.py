"""Frame-to-modalities decoding: temperature, pressure and shear."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .calibration import CalibrationError, CalibrationModel
from .markers import (DisplacementField, MarkerSet, adaptive_threshold, default_offset, default_window,
                      extract_markers, refine_centroids, track_markers)
from .mechanics import PressureField, ShearField, area_change_rate_array, decode_pressure, decode_shear
from .sensor import GrayFrame, SensorConfig
from .thermal import TemperatureField, ThermalParams, fill_mask, inpaint_mask, marker_free_brightness
from .voronoi import Tessellation, voronoi_tessellate

__all__ = ["RestFrameError", "DecoderParams", "ModalityBundle", "Decoder", "run_decode_pipeline",
           "STAGES"]

STAGES = ("threshold", "markers", "thermal", "refine", "track", "tessellate", "pressure", "shear")


class RestFrameError(ValueError):
    """The designated rest frame cannot serve as a marker reference."""


@dataclass(frozen=True)
class DecoderParams:
    # None -> 0.08, or less for markers under ~1.5 px across
    threshold_offset: Optional[float] = None
    # None -> two pitches, forced odd
    threshold_window_px: Optional[int] = None
    # None -> half a pitch
    gate_px: Optional[float] = None
    thermal: ThermalParams = ThermalParams()
    # decode only the sensing field plus one pitch of margin
    crop_to_field: bool = True


@dataclass
class ModalityBundle:
    frame_id: int
    temperature: TemperatureField
    pressure: PressureField
    shear: ShearField
    markers: MarkerSet
    displacement: DisplacementField
    # per-stage wall clock (ms); "total" spans the whole decode
    timing: dict = field(default_factory=dict)

    @property
    def stage_ms(self) -> float:
        return sum(v for k, v in self.timing.items() if k != "total")


class _Clock:
    def __init__(self):
        self.timing = {}
        self._start = self._last = time.perf_counter()

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        self.timing[name] = (now - self._last) * 1e3
        self._last = now

    def finish(self) -> dict:
        self.timing["total"] = (time.perf_counter() - self._start) * 1e3
        return self.timing


def _pixels(frame) -> np.ndarray:
    px = frame.pixels if isinstance(frame, GrayFrame) else np.asarray(frame)
    return px.astype(np.float32, copy=False)


class Decoder:
    """Decoding context: configuration, calibration and the rest reference.

    In ``raw`` mode no gains are needed: pressure is the clipped area change
    rate and shear the displacement in px. Without a temperature curve the
    temperature field carries marker-free brightness (unit "intensity").

    After :meth:`set_reference` the decoder is read-only, so :meth:`decode`
    may run concurrently from several threads.
    """

    def __init__(self, config: SensorConfig = SensorConfig(), calib: Optional[CalibrationModel] = None,
                 raw: bool = False, params: DecoderParams = DecoderParams()):
        if not raw:
            missing = [n for n in ("temp_curve", "pressure_gain", "shear_gain")
                       if calib is None or getattr(calib, n) is None]
            if missing:
                raise CalibrationError(f"calibration lacks {', '.join(missing)}; use raw mode (--raw) to decode without gains")
        self.config = config
        self.calib = calib
        self.raw = raw
        self.params = params
        self.window = params.threshold_window_px or default_window(config)
        self.offset = params.threshold_offset if params.threshold_offset is not None else default_offset(config)
        self.gate = params.gate_px if params.gate_px is not None else config.pitch_px / 2
        self.roi = self._roi()
        self.reference: Optional[MarkerSet] = None
        self.ref_tessellation: Optional[Tessellation] = None
        self._ref_tree = None

    def _roi(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) pixel slice bounds of the decoded region."""
        cfg = self.config
        if not self.params.crop_to_field:
            return 0, 0, cfg.frame_width_px, cfg.frame_height_px
        bx0, by0, bx1, by1 = cfg.field_bounds_px
        pad = cfg.pitch_px
        return (max(0, int(math.floor(bx0 - pad))), max(0, int(math.floor(by0 - pad))),
                min(cfg.frame_width_px, int(math.ceil(bx1 + pad))),
                min(cfg.frame_height_px, int(math.ceil(by1 + pad))))

    def _check_shape(self, pixels: np.ndarray) -> None:
        expected = (self.config.frame_height_px, self.config.frame_width_px)
        if pixels.shape != expected:
            raise ValueError(f"frame is {pixels.shape[1]}x{pixels.shape[0]}, config expects "
                             f"{expected[1]}x{expected[0]}")

    def _front_end(self, frame, clock: _Clock):
        pixels = _pixels(frame)
        self._check_shape(pixels)
        x0, y0, x1, y1 = self.roi
        crop = pixels[y0:y1, x0:x1]
        mask = adaptive_threshold(crop, self.window, self.offset)
        clock.lap("threshold")
        markers = extract_markers(mask, self.config, origin=(x0, y0))
        clock.lap("markers")
        brightness = marker_free_brightness(crop, markers.pixel_mask, self.config, self.params.thermal)
        curve = None if self.calib is None else self.calib.temp_curve
        if curve is not None:
            temps, flags = curve.invert(brightness, self.params.thermal.flag_margin)
            temperature = TemperatureField(temps, flags, brightness, origin=(x0, y0))
        else:
            # raw mode without a curve: report brightness itself
            temperature = TemperatureField(brightness, np.zeros(brightness.shape, np.uint8), brightness,
                                           origin=(x0, y0), unit="intensity")
        clock.lap("thermal")
        # unfiltered fill: pixels outside the fill mask then carry exactly zero weight
        background = inpaint_mask(crop, fill_mask(markers.pixel_mask, self.params.thermal),
                                  self.params.thermal.inpaint_tol)
        markers = refine_centroids(markers, crop, self.config, background=background)
        clock.lap("refine")
        return markers, temperature

    def _clamped(self, points: np.ndarray) -> np.ndarray:
        # seeds pushed past the field edge are held on it
        bx0, by0, bx1, by1 = self.config.field_bounds_px
        return np.column_stack([np.clip(points[:, 0], bx0, bx1), np.clip(points[:, 1], by0, by1)])

    def detect(self, frame) -> tuple[MarkerSet, TemperatureField]:
        """Markers and temperature of one frame; needs no reference."""
        return self._front_end(frame, _Clock())

    def set_reference(self, frame) -> MarkerSet:
        """Capture rest marker positions and the rest tessellation."""
        markers, _ = self.detect(frame)
        expected = self.config.marker_count
        if len(markers) != expected:
            raise RestFrameError(f"reference frame shows {len(markers)} markers, expected {expected}; "
                                  "is it a contact-free rest frame?")
        self.reference = markers
        self._ref_tree = cKDTree(markers.centroids)
        self.ref_tessellation = voronoi_tessellate(self._clamped(markers.centroids),
                                                   self.config.field_bounds_px, markers.ids)
        return markers

    def decode(self, frame, frame_id: int = 0) -> ModalityBundle:
        if self.reference is None:
            raise RestFrameError("no reference captured; call set_reference with a rest frame first")
        clock = _Clock()
        markers, temperature = self._front_end(frame, clock)
        disp = track_markers(self.reference, markers, self.gate, self._ref_tree)
        clock.lap("track")
        cur = voronoi_tessellate(self._clamped(disp.cur_px), self.config.field_bounds_px, disp.marker_ids)
        clock.lap("tessellate")
        pressure = decode_pressure(area_change_rate_array(self.ref_tessellation, cur), self.calib, cur, self.raw)
        clock.lap("pressure")
        shear = decode_shear(disp, self.calib, self.raw)
        clock.lap("shear")
        return ModalityBundle(frame_id, temperature, pressure, shear, markers, disp, clock.finish())


def run_decode_pipeline(frames: Sequence, calib: Optional[CalibrationModel],
                        config: SensorConfig = SensorConfig(), raw: bool = False,
                        reference=None, workers: int = 1,
                        params: DecoderParams = DecoderParams()) -> list[ModalityBundle]:
    """Decode every frame against a rest reference.

    The reference is ``reference`` if given, else ``frames[0]`` (which is then
    also decoded, as frame 0). Frames after the reference are independent and
    decode on up to ``workers`` threads; results keep input order.
    """
    frames = list(frames)
    if not frames:
        return []
    decoder = Decoder(config, calib, raw, params)
    decoder.set_reference(frames[0] if reference is None else reference)
    if workers <= 1:
        return [decoder.decode(f, i) for i, f in enumerate(frames)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(decoder.decode, frames, range(len(frames))))
