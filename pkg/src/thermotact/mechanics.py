"""Pressure from Voronoi cell-area change, shear from marker displacement."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import cv2
import numpy as np

from .calibration import CalibrationError, CalibrationModel
from .markers import DisplacementField
from .voronoi import Tessellation

__all__ = [
    "PressureField",
    "ShearField",
    "area_change_rates",
    "area_change_rate_array",
    "decode_pressure",
    "decode_shear",
]


def _rows_of(ids: np.ndarray, wanted: np.ndarray) -> np.ndarray:
    """Positions of ``wanted`` within ``ids``; -1 where absent."""
    if len(ids) == len(wanted) and np.array_equal(ids, wanted):
        return np.arange(len(ids))
    order = np.argsort(ids, kind="stable")
    pos = np.searchsorted(ids, wanted, sorter=order)
    pos = np.minimum(pos, len(ids) - 1)
    rows = order[pos]
    return np.where(ids[rows] == wanted, rows, -1)


def area_change_rate_array(ref: Tessellation, cur: Tessellation) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`area_change_rates`: ``(ids, rates)`` in ``cur`` order."""
    rows = _rows_of(ref.ids, cur.ids)
    if (rows < 0).any():
        missing = cur.ids[rows < 0]
        raise KeyError(f"current tessellation has ids absent from the reference: {missing[:5].tolist()}")
    a_ref = ref.areas[rows]
    return cur.ids.copy(), (cur.areas - a_ref) / a_ref


def area_change_rates(ref: Tessellation, cur: Tessellation) -> dict:
    """``(A_cur - A_ref) / A_ref`` for every id of ``cur``."""
    ids, rates = area_change_rate_array(ref, cur)
    return dict(zip(ids.tolist(), rates.tolist()))


@dataclass
class PressureField:
    ids: np.ndarray
    seeds_px: np.ndarray
    rates: np.ndarray
    pressures: np.ndarray
    gain: float
    # cells the gray render paints; row i matches ids[i]
    tessellation: Optional[Tessellation] = None
    _gray: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def total(self) -> float:
        """Summed pressure; the scalar force readout."""
        return float(self.pressures.sum())

    @property
    def max_pressure(self) -> float:
        return float(self.pressures.max()) if len(self.pressures) else 0.0

    def gray_levels(self) -> np.ndarray:
        """Per-cell ``round(255 * p / max p)``; all zero when nothing is pressed."""
        top = self.max_pressure
        if top <= 0:
            return np.zeros(len(self), dtype=np.uint8)
        return np.round(255.0 * self.pressures / top).astype(np.uint8)

    def render_gray(self, shape: tuple[int, int]) -> np.ndarray:
        """Flat-filled cell image, uint8 of ``shape = (height, width)``."""
        if self._gray is not None and self._gray.shape == tuple(shape):
            return self._gray
        img = np.zeros(shape, dtype=np.uint8)
        levels = self.gray_levels()
        if self.tessellation is not None:
            shift = 8
            scale = float(1 << shift)
            for k in np.flatnonzero(levels):
                # continuous coords have pixel centres at +0.5
                poly = np.round((self.tessellation.polygon(k) - 0.5) * scale).astype(np.int32)
                cv2.fillPoly(img, [poly], int(levels[k]), lineType=cv2.LINE_8, shift=shift)
        self._gray = img
        return img


@dataclass
class ShearField:
    ids: np.ndarray
    seeds_px: np.ndarray
    vectors: np.ndarray
    # "N" when calibrated, "px" in raw mode
    unit: str
    gain: float
    displacement_sum_px: float
    displacement_px: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def magnitude(self) -> float:
        """Scalar force readout ``gain * sum |displacement|``."""
        return self.gain * self.displacement_sum_px

    @property
    def mean_vector(self) -> np.ndarray:
        return self.vectors.mean(axis=0) if len(self) else np.zeros(2)

    @property
    def direction_deg(self) -> float:
        """Angle of the mean vector, image axes (+x right, +y down)."""
        v = self.mean_vector
        return float(np.degrees(np.arctan2(v[1], v[0])))


def _gain(calib: Optional[CalibrationModel], name: str, raw: bool) -> float:
    if raw:
        return 1.0
    g = None if calib is None else getattr(calib, name)
    if g is None:
        raise CalibrationError(f"{name} is not fitted; use raw mode for uncalibrated output")
    return g.decode_gain


def decode_pressure(rates: Union[Mapping[int, float], tuple], calib: Optional[CalibrationModel],
                    tessellation: Optional[Tessellation] = None, raw: bool = False) -> PressureField:
    """``pressure = gain * max(rate, 0)`` per marker.

    ``rates`` is an id -> rate map or an ``(ids, rates)`` array pair.
    ``tessellation`` (the current one) supplies seeds and cell polygons for the
    gray render; without it seeds are NaN and the render stays black.
    """
    gain = _gain(calib, "pressure_gain", raw)
    if isinstance(rates, Mapping):
        ids = np.fromiter(rates.keys(), dtype=np.int64, count=len(rates))
        r = np.fromiter(rates.values(), dtype=float, count=len(rates))
    else:
        ids, r = (np.asarray(x) for x in rates)
    cells = None
    seeds = np.full((len(ids), 2), np.nan)
    if tessellation is not None:
        rows = _rows_of(tessellation.ids, ids)
        if (rows < 0).any():
            raise KeyError("rates name markers the tessellation does not contain")
        seeds = tessellation.seeds[rows]
        if np.array_equal(rows, np.arange(len(tessellation))):
            cells = tessellation
        else:
            cells = Tessellation(tessellation.bounds, ids, seeds, tessellation.areas[rows],
                                 tessellation.vertices[rows], tessellation.vertex_counts[rows])
    return PressureField(ids, seeds, r, gain * np.maximum(r, 0.0), gain, cells)


def decode_shear(disp: DisplacementField, calib: Optional[CalibrationModel], raw: bool = False) -> ShearField:
    """``shear = gain * displacement`` per tracked marker."""
    gain = _gain(calib, "shear_gain", raw)
    d = disp.displacement_px
    total = float(np.hypot(d[:, 0], d[:, 1]).sum()) if len(d) else 0.0
    return ShearField(disp.marker_ids.copy(), disp.ref_px.copy(), gain * d,
                      "px" if raw else "N", gain, total, d)
