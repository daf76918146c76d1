"""Sensor geometry, ground-truth contact scenarios and synthetic frame rendering.

Coordinates
-----------
Millimetre coordinates are measured from the top-left corner of the sensing
field, x to the right and y downwards. Pixel coordinates are continuous: pixel
``(row, col)`` covers ``[col, col + 1) x [row, row + 1)`` so its centre sits at
``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "SensorConfig",
    "TruthCurve",
    "ContactPrimitive",
    "ContactScenario",
    "GrayFrame",
    "ScenarioError",
    "brightness_of",
    "deform_grid",
    "footprint_weight",
    "render_background",
    "render_frame",
    "marker_centers_px",
    "rest_scenario",
]


class ScenarioError(ValueError):
    """Raised for contact scenarios the simulator cannot render."""


@dataclass(frozen=True)
class SensorConfig:
    frame_width_px: int = 640
    frame_height_px: int = 480
    sensing_field_mm: tuple[float, float] = (40.0, 40.0)
    px_per_mm: float = 10.0
    marker_grid: tuple[int, int] = (40, 40)
    marker_pitch_mm: float = 1.0
    marker_diameter_mm: float = 0.25
    frame_rate_hz: float = 60.0
    base_brightness: float = 0.2
    supersample: int = 4
    # ground-truth deformation gains
    normal_gain_mm_per_n: float = 0.05
    shear_gain_mm_per_n: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "sensing_field_mm", tuple(float(v) for v in self.sensing_field_mm))
        object.__setattr__(self, "marker_grid", tuple(int(v) for v in self.marker_grid))
        lengths = (*self.sensing_field_mm, self.px_per_mm, self.marker_pitch_mm,
                   self.marker_diameter_mm, self.frame_rate_hz)
        if min(lengths) <= 0 or self.frame_width_px <= 0 or self.frame_height_px <= 0:
            raise ValueError("sensor lengths and frame dimensions must be strictly positive")
        if min(self.marker_grid) < 1:
            raise ValueError("marker grid needs at least one marker per axis")
        fw, fh = self.field_size_px
        if fw > self.frame_width_px or fh > self.frame_height_px:
            raise ValueError(f"sensing field {fw:g}x{fh:g} px does not fit the "
                             f"{self.frame_width_px}x{self.frame_height_px} frame")
        for n, extent in zip(self.marker_grid, self.sensing_field_mm):
            if (n - 1) * self.marker_pitch_mm > extent:
                raise ValueError("marker grid extent exceeds the sensing field")
        if not 0.0 <= self.base_brightness <= 1.0:
            raise ValueError("base_brightness must lie in [0, 1]")
        if self.supersample < 4:
            raise ValueError("supersample must be at least 4")

    @classmethod
    def from_dict(cls, data: dict) -> "SensorConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sensor config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def pitch_px(self) -> float:
        return self.marker_pitch_mm * self.px_per_mm

    @property
    def marker_radius_px(self) -> float:
        return 0.5 * self.marker_diameter_mm * self.px_per_mm

    @property
    def nominal_marker_area_px(self) -> float:
        return math.pi * self.marker_radius_px ** 2

    @property
    def marker_count(self) -> int:
        return self.marker_grid[0] * self.marker_grid[1]

    @property
    def field_size_px(self) -> tuple[float, float]:
        return (self.sensing_field_mm[0] * self.px_per_mm,
                self.sensing_field_mm[1] * self.px_per_mm)

    @property
    def grid_offset_mm(self) -> tuple[float, float]:
        """Position of the first marker inside the field (grid is centred)."""
        return tuple(0.5 * (extent - (n - 1) * self.marker_pitch_mm)
                     for n, extent in zip(self.marker_grid, self.sensing_field_mm))

    @property
    def field_origin_px(self) -> tuple[float, float]:
        """Top-left corner of the sensing field in frame pixels.

        The field is centred in the frame, then nudged by less than one pixel so
        the first marker lands on a pixel centre. With an integer pitch in pixels
        every rest marker is then pixel-centred, which keeps tiny markers above
        the detection threshold.
        """
        out = []
        for frame_px, field_px, first_mm in zip(
                (self.frame_width_px, self.frame_height_px), self.field_size_px, self.grid_offset_mm):
            origin = 0.5 * (frame_px - field_px)
            first = origin + first_mm * self.px_per_mm
            shifted = origin + (math.floor(first) + 0.5 - first)
            for candidate in (shifted, shifted - 1.0, shifted + 1.0):
                if 0.0 <= candidate and candidate + field_px <= frame_px:
                    origin = candidate
                    break
            out.append(origin)
        return tuple(out)

    @property
    def field_bounds_px(self) -> tuple[float, float, float, float]:
        x0, y0 = self.field_origin_px
        fw, fh = self.field_size_px
        return (x0, y0, x0 + fw, y0 + fh)

    def rest_grid_mm(self) -> np.ndarray:
        """Undeformed marker centres, row-major, shape ``(rows * cols, 2)``."""
        nx, ny = self.marker_grid
        ox, oy = self.grid_offset_mm
        xs = ox + self.marker_pitch_mm * np.arange(nx)
        ys = oy + self.marker_pitch_mm * np.arange(ny)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def mm_to_px(self, points_mm) -> np.ndarray:
        return np.asarray(points_mm, dtype=float) * self.px_per_mm + np.asarray(self.field_origin_px)

    def px_to_mm(self, points_px) -> np.ndarray:
        return (np.asarray(points_px, dtype=float) - np.asarray(self.field_origin_px)) / self.px_per_mm


@dataclass(frozen=True)
class TruthCurve:
    """Piecewise-linear brightness response of the luminescent film.

    Flat at ``base`` below ``onset_c``, rising linearly to ``peak_brightness`` at
    ``peak_c``, falling at ``fall_per_c`` until ``end_c`` and flat beyond.
    """

    base: float = 0.2
    onset_c: float = 50.0
    peak_c: float = 180.0
    peak_brightness: float = 0.8
    fall_per_c: float = 0.01
    end_c: float = 200.0

    def __post_init__(self):
        if not self.onset_c < self.peak_c < self.end_c:
            raise ValueError("curve knots must satisfy onset < peak < end")
        if not self.peak_brightness > self.base:
            raise ValueError("peak brightness must exceed the base level")
        if self.fall_per_c <= 0:
            raise ValueError("fall_per_c must be positive")
        if not (0.0 <= self.base <= 1.0 and 0.0 <= self.end_brightness and self.peak_brightness <= 1.0):
            raise ValueError("curve values must stay within [0, 1]")

    @property
    def end_brightness(self) -> float:
        return self.peak_brightness - self.fall_per_c * (self.end_c - self.peak_c)

    def knots(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([self.onset_c, self.peak_c, self.end_c]),
                np.array([self.base, self.peak_brightness, self.end_brightness]))


def brightness_of(temperature_c, curve: TruthCurve = TruthCurve()):
    """Film brightness for a contact temperature; scalar in, scalar out."""
    temps, values = curve.knots()
    out = np.interp(temperature_c, temps, values)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ContactPrimitive:
    """One contact footprint.

    ``size_mm`` is the radius for ``shape="disk"`` and the side length for
    ``shape="square"``.
    """

    center_mm: tuple[float, float]
    shape: str = "disk"
    size_mm: float = 1.5
    temperature_c: float = 25.0
    normal_force_n: float = 0.0
    shear_force_n: tuple[float, float] = (0.0, 0.0)
    edge_blur_mm: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "center_mm", tuple(float(v) for v in self.center_mm))
        object.__setattr__(self, "shear_force_n", tuple(float(v) for v in self.shear_force_n))
        if self.shape not in ("disk", "square"):
            raise ScenarioError(f"unknown footprint shape {self.shape!r}")
        if self.size_mm <= 0:
            raise ScenarioError("footprint dimension must be positive")
        if not 20.0 <= self.temperature_c <= 250.0:
            raise ScenarioError(f"temperature {self.temperature_c} C outside model validity [20, 250]")
        if self.normal_force_n < 0:
            raise ScenarioError("normal force must be non-negative")
        if self.edge_blur_mm < 0:
            raise ScenarioError("edge blur must be non-negative")

    @property
    def sigma_mm(self) -> float:
        """Spatial scale of the deformation envelope."""
        return self.size_mm if self.shape == "disk" else 0.5 * self.size_mm

    @property
    def half_extent_mm(self) -> float:
        return self.sigma_mm

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ContactScenario:
    contacts: tuple[ContactPrimitive, ...] = ()
    pixel_noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "contacts", tuple(self.contacts))
        if self.pixel_noise_sigma < 0:
            raise ScenarioError("pixel noise sigma must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "ContactScenario":
        contacts = tuple(ContactPrimitive(**c) for c in data.get("contacts", ()))
        return cls(contacts=contacts,
                   pixel_noise_sigma=float(data.get("pixel_noise_sigma", 0.0)),
                   rng_seed=int(data.get("rng_seed", 0)))

    def to_dict(self) -> dict:
        return {"contacts": [c.to_dict() for c in self.contacts],
                "pixel_noise_sigma": self.pixel_noise_sigma,
                "rng_seed": self.rng_seed}

    def with_seed(self, seed: int) -> "ContactScenario":
        return replace(self, rng_seed=seed)

    def validate(self, config: SensorConfig) -> None:
        fw, fh = config.sensing_field_mm
        for i, c in enumerate(self.contacts):
            h = c.half_extent_mm
            cx, cy = c.center_mm
            if cx - h < 0 or cy - h < 0 or cx + h > fw or cy + h > fh:
                raise ScenarioError(
                    f"contact {i} footprint [{cx - h:g}, {cx + h:g}] x [{cy - h:g}, {cy + h:g}] mm "
                    f"lies outside the {fw:g}x{fh:g} mm sensing field")


@dataclass
class GrayFrame:
    """Single-channel intensity image with values in [0, 1]."""

    pixels: np.ndarray
    timestamp: Optional[float] = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError("GrayFrame pixels must be a 2-D array")
        if px.size and (np.nanmin(px) < 0.0 or np.nanmax(px) > 1.0 or not np.isfinite(px).all()):
            raise ValueError("GrayFrame intensities must be finite and lie in [0, 1]")
        self.pixels = px

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def deform_grid(scenario: ContactScenario, config: SensorConfig = SensorConfig()) -> np.ndarray:
    """Displaced marker centres in mm, row-major like ``config.rest_grid_mm()``.

    Each contact adds a radial term ``k_n * F_n * (d / s) * exp(-d^2 / 2 s^2)``
    pointing away from its centre and a shear term ``k_s * F_s * exp(-d^2 / 2 s^2)``
    along the shear vector, where ``s`` is the footprint radius (or half side).
    """
    rest = config.rest_grid_mm()
    out = rest.copy()
    for c in scenario.contacts:
        s = c.sigma_mm
        rel = rest - np.asarray(c.center_mm)
        envelope = np.exp(-(rel ** 2).sum(axis=1) / (2.0 * s * s))
        if c.normal_force_n:
            out += (config.normal_gain_mm_per_n * c.normal_force_n / s * envelope)[:, None] * rel
        if any(c.shear_force_n):
            out += (config.shear_gain_mm_per_n * envelope)[:, None] * np.asarray(c.shear_force_n)
    return out


def _footprint_coverage(contact: ContactPrimitive, config: SensorConfig,
                        x0: int, y0: int, w: int, h: int) -> np.ndarray:
    """Supersampled area coverage of a footprint on the pixel window at (x0, y0)."""
    ss = config.supersample
    cx, cy = config.mm_to_px(contact.center_mm)
    offs = (np.arange(ss) + 0.5) / ss
    xs = (x0 + np.arange(w)[:, None] + offs[None, :]).ravel()
    ys = (y0 + np.arange(h)[:, None] + offs[None, :]).ravel()
    size_px = contact.size_mm * config.px_per_mm
    if contact.shape == "square":
        half = 0.5 * size_px
        inx = (np.abs(xs - cx) <= half).reshape(w, ss).mean(axis=1)
        iny = (np.abs(ys - cy) <= half).reshape(h, ss).mean(axis=1)
        return np.outer(iny, inx)
    inside = ((xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2) <= size_px ** 2
    return inside.reshape(h, ss, w, ss).mean(axis=(1, 3))


def _blurred_coverage(contact: ContactPrimitive, config: SensorConfig):
    """Edge-blurred footprint weight over its padded bounding box.

    Returns ``(x0, y0, weights)`` with ``weights`` in [0, 1].
    """
    H, W = config.frame_height_px, config.frame_width_px
    blur_px = contact.edge_blur_mm * config.px_per_mm
    pad = int(math.ceil(4 * blur_px)) + 2
    cx, cy = config.mm_to_px(contact.center_mm)
    half = contact.half_extent_mm * config.px_per_mm
    x0 = max(int(math.floor(cx - half)) - pad, 0)
    y0 = max(int(math.floor(cy - half)) - pad, 0)
    x1 = min(int(math.ceil(cx + half)) + pad, W)
    y1 = min(int(math.ceil(cy + half)) + pad, H)
    cover = _footprint_coverage(contact, config, x0, y0, x1 - x0, y1 - y0)
    if blur_px > 0:
        cover = gaussian_filter(cover, blur_px, mode="constant", cval=0.0)
    return x0, y0, cover


def footprint_weight(contact: ContactPrimitive, config: SensorConfig = SensorConfig()) -> np.ndarray:
    """Full-frame blurred footprint weight; 1 deep inside, 0 far outside."""
    out = np.zeros((config.frame_height_px, config.frame_width_px))
    x0, y0, cover = _blurred_coverage(contact, config)
    out[y0:y0 + cover.shape[0], x0:x0 + cover.shape[1]] = cover
    return out


def render_background(scenario: ContactScenario, config: SensorConfig = SensorConfig(),
                      curve: TruthCurve = TruthCurve()) -> np.ndarray:
    """Marker-free film brightness, shape ``(height, width)``, float64.

    Each contact lifts the base level by ``(B(T) - base) * weight`` where
    ``weight`` is its edge-blurred footprint; overlapping contacts take the max.
    """
    scenario.validate(config)
    bg = np.full((config.frame_height_px, config.frame_width_px), config.base_brightness)
    for c in scenario.contacts:
        lift = brightness_of(c.temperature_c, curve) - config.base_brightness
        if lift <= 0:
            continue
        x0, y0, cover = _blurred_coverage(c, config)
        region = bg[y0:y0 + cover.shape[0], x0:x0 + cover.shape[1]]
        np.maximum(region, config.base_brightness + lift * cover, out=region)
    return bg


def _marker_coverage(centers_px: np.ndarray, config: SensorConfig) -> np.ndarray:
    """Per-pixel fraction of area covered by opaque marker disks."""
    H, W = config.frame_height_px, config.frame_width_px
    r = config.marker_radius_px
    ss = config.supersample
    reach = int(math.ceil(r)) + 1
    d = np.arange(-reach, reach + 1)
    py, px = np.meshgrid(d, d, indexing="ij")
    py, px = py.ravel(), px.ravel()
    sub = (np.arange(ss) + 0.5) / ss
    sy, sx = np.meshgrid(sub, sub, indexing="ij")
    sy, sx = sy.ravel(), sx.ravel()

    base_col = np.floor(centers_px[:, 0]).astype(np.int64)
    base_row = np.floor(centers_px[:, 1]).astype(np.int64)
    cols = base_col[:, None] + px[None, :]
    rows = base_row[:, None] + py[None, :]
    # sample position relative to the disk centre: (marker, pixel, subsample)
    dx = (cols - centers_px[:, 0:1])[:, :, None] + sx[None, None, :]
    dy = (rows - centers_px[:, 1:2])[:, :, None] + sy[None, None, :]
    cover = ((dx * dx + dy * dy) <= r * r).mean(axis=2)

    keep = (cover > 0) & (cols >= 0) & (cols < W) & (rows >= 0) & (rows < H)
    flat = rows[keep] * W + cols[keep]
    total = np.bincount(flat, weights=cover[keep], minlength=H * W)
    return np.minimum(total, 1.0).reshape(H, W)


def render_frame(scenario: ContactScenario, config: SensorConfig = SensorConfig(),
                 curve: TruthCurve = TruthCurve(), timestamp: Optional[float] = None) -> GrayFrame:
    """Render the raw sensor image for a ground-truth scenario.

    Deterministic for a given scenario (including its ``rng_seed``).
    """
    bg = render_background(scenario, config, curve)
    centers = config.mm_to_px(deform_grid(scenario, config))
    img = bg * (1.0 - _marker_coverage(centers, config))
    if scenario.pixel_noise_sigma > 0:
        rng = np.random.default_rng(scenario.rng_seed)
        img += rng.normal(0.0, scenario.pixel_noise_sigma, img.shape)
        np.clip(img, 0.0, 1.0, out=img)
    return GrayFrame(img, timestamp)


def marker_centers_px(scenario: ContactScenario, config: SensorConfig = SensorConfig()) -> np.ndarray:
    """Analytic (ground-truth) marker centres in frame pixels."""
    return config.mm_to_px(deform_grid(scenario, config))


def rest_scenario(scenario: Optional[ContactScenario] = None) -> ContactScenario:
    """The contact-free scenario sharing noise settings with ``scenario``."""
    if scenario is None:
        return ContactScenario()
    return replace(scenario, contacts=())
