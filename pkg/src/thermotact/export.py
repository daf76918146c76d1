"""File formats: frames, JSON documents, field CSVs and preview images."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Union

import cv2
import numpy as np

from .calibration import CalibrationError, CalibrationSample, TempFlag
from .markers import DisplacementField, MarkerSet
from .mechanics import PressureField, ShearField
from .sensor import ContactScenario, GrayFrame, SensorConfig
from .thermal import TemperatureField

PathLike = Union[str, os.PathLike]

QUIVER_SCALE = 10.0
FRAME_SUFFIXES = (".png", ".pgm")
SAMPLE_HEADER = "kind,stimulus,response,repeat_index"


# frames

def write_frame(frame, path: PathLike) -> None:
    """8-bit PNG or binary PGM (P5), ``round(255 * value)``."""
    pixels = frame.pixels if isinstance(frame, GrayFrame) else np.asarray(frame)
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        h, w = data.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(data.tobytes())
    elif suffix == ".png":
        if not cv2.imwrite(str(path), data):
            raise OSError(f"could not write {path}")
    else:
        raise ValueError(f"unsupported frame format {suffix!r}; use .png or .pgm")


def read_frame(path: PathLike) -> GrayFrame:
    """Load an 8- or 16-bit grayscale PNG/PGM as intensities in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"frame not found: {path}")
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ValueError(f"could not decode image {path}")
    if data.ndim != 2:
        raise ValueError(f"{path} is not single-channel")
    scale = 65535.0 if data.dtype == np.uint16 else 255.0
    return GrayFrame((data.astype(np.float32) / np.float32(scale)))


def list_frames(directory: PathLike) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"frame directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)


# JSON documents

def load_json(path: PathLike) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path} is not valid JSON: {exc}") from None


def save_json(data: dict, path: PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path) -> SensorConfig:
    return SensorConfig() if path is None else SensorConfig.from_dict(load_json(path))


def load_scenarios(path: PathLike) -> list[ContactScenario]:
    """A scenario file holds one scenario or ``{"sequence": [scenario, ...]}``."""
    data = load_json(path)
    if "sequence" in data:
        seq = [ContactScenario.from_dict(d) for d in data["sequence"]]
        if not seq:
            raise ValueError(f"{path}: empty scenario sequence")
        return seq
    return [ContactScenario.from_dict(data)]


# calibration samples

def write_samples(samples, path: PathLike) -> None:
    lines = [SAMPLE_HEADER]
    lines += [f"{s.kind},{s.stimulus:.6g},{s.response:.10g},{s.repeat_index}" for s in samples]
    Path(path).write_text("\n".join(lines) + "\n")


def read_samples(path: PathLike) -> list[CalibrationSample]:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != SAMPLE_HEADER:
        raise CalibrationError(f"{path}: expected header '{SAMPLE_HEADER}'")
    out = []
    for n, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise CalibrationError(f"{path}:{n}: expected 4 fields, got {len(parts)}")
        try:
            out.append(CalibrationSample(parts[0].strip(), float(parts[1]), float(parts[2]), int(parts[3])))
        except ValueError as exc:
            raise CalibrationError(f"{path}:{n}: {exc}") from None
    return out


def read_sample_dir(directory: PathLike) -> list[CalibrationSample]:
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"sample directory not found: {directory}")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise CalibrationError(f"no sample CSV files in {directory}")
    return [s for f in files for s in read_samples(f)]


# field CSVs

def _write_rows(path: PathLike, header: str, rows: np.ndarray, fmt: str) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        if len(rows):
            np.savetxt(fh, rows, fmt=fmt, delimiter=",")


def write_markers_csv(markers: MarkerSet, path: PathLike) -> None:
    rows = np.column_stack([markers.ids, markers.centroids, markers.areas]) if len(markers) else np.zeros((0, 4))
    _write_rows(path, "id,x_px,y_px,area", rows, "%d,%.4f,%.4f,%d")


def write_displacement_csv(disp: DisplacementField, path: PathLike) -> None:
    rows = (np.column_stack([disp.marker_ids, disp.ref_px, disp.cur_px, disp.displacement_px])
            if len(disp) else np.zeros((0, 7)))
    _write_rows(path, "id,ref_x,ref_y,cur_x,cur_y,dx,dy", rows, "%d,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f")


def write_temperature_csv(field: TemperatureField, path: PathLike) -> None:
    """One row per pixel centre: ``x_px,y_px,temp_C,flag`` with text flags."""
    h, w = field.shape
    x0, y0 = field.origin
    ys, xs = np.mgrid[0:h, 0:w]
    labels = np.array([TempFlag(i).label for i in range(len(TempFlag))])
    xs = (xs.ravel() + x0 + 0.5)
    ys = (ys.ravel() + y0 + 0.5)
    vals = np.char.mod("%.3f", np.asarray(field.values, dtype=np.float64).ravel())
    coords_x = np.char.mod("%.1f", xs)
    coords_y = np.char.mod("%.1f", ys)
    flags = labels[field.flags.ravel()]
    body = "\n".join(",".join(r) for r in zip(coords_x, coords_y, vals, flags))
    column = "temp_C" if field.unit == "degC" else "brightness"
    Path(path).write_text(f"x_px,y_px,{column},flag\n" + body + "\n")


def write_pressure_csv(field: PressureField, path: PathLike) -> None:
    rows = np.column_stack([field.ids, field.seeds_px, field.pressures]) if len(field) else np.zeros((0, 4))
    _write_rows(path, "id,x_px,y_px,value", rows, "%d,%.4f,%.4f,%.6g")


def write_shear_csv(field: ShearField, path: PathLike) -> None:
    rows = np.column_stack([field.ids, field.seeds_px, field.vectors]) if len(field) else np.zeros((0, 5))
    _write_rows(path, "id,x_px,y_px,fx,fy", rows, "%d,%.4f,%.4f,%.6g,%.6g")


# images

def temperature_heatmap(field: TemperatureField, frame_shape=None) -> np.ndarray:
    """False-colour BGR image; below-range pixels black, ambiguous pixels white.

    Placed at the field origin inside a black ``frame_shape`` canvas if given.
    """
    values = np.asarray(field.values, dtype=np.float64)
    flags = field.flags
    in_range = flags == TempFlag.IN_RANGE
    if field.unit == "degC" and in_range.any():
        lo, hi = 50.0, 180.0
    else:
        lo, hi = float(values.min()), float(values.max())
    scaled = np.clip((values - lo) / max(hi - lo, 1e-12), 0.0, 1.0)
    img = cv2.applyColorMap(np.round(scaled * 255).astype(np.uint8), cv2.COLORMAP_INFERNO)
    if field.unit == "degC":
        img[flags == TempFlag.BELOW_RANGE] = 0
        img[flags == TempFlag.AMBIGUOUS_ABOVE_PEAK] = 255
    if frame_shape is None:
        return img
    canvas = np.zeros(tuple(frame_shape) + (3,), np.uint8)
    x0, y0 = field.origin
    canvas[y0:y0 + img.shape[0], x0:x0 + img.shape[1]] = img
    return canvas


def shear_quiver(field: ShearField, frame_shape, scale: float = QUIVER_SCALE) -> np.ndarray:
    """Displacement arrows (x ``scale``) drawn as line segments on black."""
    img = np.zeros(tuple(frame_shape), np.uint8)
    if len(field) == 0:
        return img
    disp = field.displacement_px if field.displacement_px is not None else field.vectors / field.gain
    shift = 4
    k = float(1 << shift)
    start = np.round((field.seeds_px - 0.5) * k).astype(np.int32)
    end = np.round((field.seeds_px + scale * disp - 0.5) * k).astype(np.int32)
    for a, b in zip(start, end):
        cv2.line(img, (int(a[0]), int(a[1])), (int(b[0]), int(b[1])), 255, 1, cv2.LINE_8, shift)
    return img


def write_image(image: np.ndarray, path: PathLike) -> None:
    if not cv2.imwrite(str(path), image):
        raise OSError(f"could not write {path}")
