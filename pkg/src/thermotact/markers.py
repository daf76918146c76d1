"""Marker segmentation, centroid extraction and rest-frame tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import cv2
import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .boxfilter import box_mean
from .sensor import GrayFrame, SensorConfig

__all__ = [
    "MarkerSet",
    "DisplacementField",
    "default_window",
    "default_offset",
    "adaptive_threshold",
    "extract_markers",
    "refine_centroids",
    "track_markers",
]

AREA_BOUNDS = (0.25, 4.0)
DEFAULT_OFFSET = 0.08


@dataclass
class MarkerSet:
    """Detected markers; row ``i`` of every array belongs to ``ids[i]``."""

    ids: np.ndarray
    centroids: np.ndarray
    areas: np.ndarray
    shape: tuple[int, int]
    # boolean image of the accepted marker pixels
    pixel_mask: Optional[np.ndarray] = None
    # label image, value ``id + 1`` on accepted marker pixels, 0 elsewhere
    labels: Optional[np.ndarray] = None
    # frame position (x, y) of the mask's top-left pixel when it covers a crop
    origin: tuple[int, int] = (0, 0)

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def empty(cls, shape, origin=(0, 0)) -> "MarkerSet":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 2)), np.zeros(0, dtype=np.int64),
                   tuple(shape), np.zeros(shape, dtype=bool), np.zeros(shape, dtype=np.int32),
                   tuple(origin))


@dataclass
class DisplacementField:
    """Matches between reference and current markers.

    ``marker_ids`` are reference ids; ``cur_ids`` the matching current ids.
    """

    marker_ids: np.ndarray
    cur_ids: np.ndarray
    ref_px: np.ndarray
    cur_px: np.ndarray
    unmatched_ref_ids: np.ndarray
    unmatched_cur_ids: np.ndarray

    @property
    def displacement_px(self) -> np.ndarray:
        return self.cur_px - self.ref_px

    def __len__(self) -> int:
        return len(self.marker_ids)


def default_window(config: SensorConfig) -> int:
    """Two pitches, forced odd."""
    return int(round(2 * config.pitch_px)) | 1


def worst_case_coverage(radius_px: float, samples: int = 200) -> float:
    """Largest single-pixel coverage of a disk centred on a pixel corner.

    This is the darkest pixel a marker is guaranteed to produce whatever its
    sub-pixel phase.
    """
    t = (np.arange(samples) + 0.5) / samples
    return float(((t[:, None] ** 2 + t[None, :] ** 2) <= radius_px ** 2).mean())


def default_offset(config: SensorConfig) -> float:
    """0.08, lowered to half the worst-case marker contrast for tiny markers.

    Below about 1.5 px diameter a marker straddling a pixel corner dims no
    pixel by 0.08 on the base background, so a fixed offset would miss it.
    """
    contrast = config.base_brightness * worst_case_coverage(config.marker_radius_px)
    return min(DEFAULT_OFFSET, 0.5 * contrast)


def adaptive_threshold(frame, window_px: int, offset: float = DEFAULT_OFFSET) -> np.ndarray:
    """Mark pixels darker than their local mean by more than ``offset``."""
    pixels = frame.pixels if isinstance(frame, GrayFrame) else np.asarray(frame)
    if window_px < 3 or window_px % 2 == 0:
        raise ValueError(f"window_px must be odd and >= 3, got {window_px}")
    h, w = pixels.shape
    if window_px > h or window_px > w:
        raise ValueError(f"threshold window {window_px} px exceeds the {w}x{h} frame")
    local = box_mean(pixels, window_px // 2)
    return pixels < local - offset


def _row_major_order(centroids: np.ndarray, config: SensorConfig) -> np.ndarray:
    first_y = config.field_origin_px[1] + config.grid_offset_mm[1] * config.px_per_mm
    rows = np.round((centroids[:, 1] - first_y) / config.pitch_px)
    return np.lexsort((centroids[:, 0], rows))


def extract_markers(mask: np.ndarray, config: SensorConfig, origin: tuple[int, int] = (0, 0)) -> MarkerSet:
    """Connected components of ``mask`` that have a plausible marker area.

    Centroids are the plain mean of member pixel centres, in frame pixels when
    ``mask`` is a crop whose top-left pixel sits at ``origin``; ids run row-major.
    """
    mask = np.asarray(mask, dtype=bool)
    origin = (int(origin[0]), int(origin[1]))
    if not mask.any():
        return MarkerSet.empty(mask.shape, origin)
    n, labels, stats, cents = cv2.connectedComponentsWithStats(
        mask.view(np.uint8), connectivity=8, ltype=cv2.CV_32S)
    areas = stats[1:, cv2.CC_STAT_AREA]
    nominal = config.nominal_marker_area_px
    keep = (areas >= AREA_BOUNDS[0] * nominal) & (areas <= AREA_BOUNDS[1] * nominal)
    kept = np.flatnonzero(keep) + 1
    if kept.size == 0:
        return MarkerSet.empty(mask.shape, origin)
    centroids = cents[kept] + (origin[0] + 0.5, origin[1] + 0.5)
    order = _row_major_order(centroids, config)

    lut = np.zeros(n, dtype=np.int32)
    lut[kept[order]] = np.arange(1, kept.size + 1)
    compact = lut[labels]
    return MarkerSet(ids=np.arange(kept.size), centroids=centroids[order],
                     areas=areas[kept - 1][order], shape=mask.shape,
                     pixel_mask=compact > 0, labels=compact, origin=origin)


@njit(cache=True, nogil=True)
def _weighted_sums(grown, img, background, n, x0, y0):
    wsum = np.zeros(n)
    sx = np.zeros(n)
    sy = np.zeros(n)
    h, w = img.shape
    for i in range(h):
        for j in range(w):
            lab = int(grown[i, j])
            if lab == 0:
                continue
            bg = background[i, j]
            if bg <= 0:
                continue
            # fraction of the pixel the marker covers
            wt = 1.0 - img[i, j] / bg
            if wt <= 0:
                continue
            k = lab - 1
            wsum[k] += wt
            sx[k] += wt * (x0 + j + 0.5)
            sy[k] += wt * (y0 + i + 0.5)
    return wsum, sx, sy


def refine_centroids(markers: MarkerSet, frame, config: SensorConfig,
                     background: Optional[np.ndarray] = None) -> MarkerSet:
    """Coverage-weighted centroids over each component grown by one pixel.

    The binary mask throws away the partial coverage of edge pixels; weighting
    each pixel by its covered fraction ``1 - intensity / background`` recovers
    it without leaning towards the brighter side on a gradient. ``background`` should be the
    marker-free brightness when available, ideally an unfiltered fill so that
    pixels off the marker weigh exactly zero; otherwise a local maximum filter stands in for it, which is biased on
    brightness gradients. ``frame`` and ``background`` must cover the same
    pixels as ``markers.labels``.
    """
    if len(markers) == 0 or markers.labels is None:
        return markers
    pixels = frame.pixels if isinstance(frame, GrayFrame) else np.asarray(frame)
    img = pixels.astype(np.float32, copy=False)
    if img.shape != markers.labels.shape:
        raise ValueError(f"frame {img.shape} does not match the marker labels {markers.labels.shape}")
    if background is None:
        reach = max(1, int(math.ceil(2 * config.marker_radius_px)))
        background = cv2.dilate(img, np.ones((2 * reach + 1, 2 * reach + 1), np.uint8))
    grown = cv2.dilate(markers.labels.astype(np.float32), np.ones((3, 3), np.uint8))
    bg = np.ascontiguousarray(background, dtype=np.float32)
    if bg.shape != img.shape:
        raise ValueError("background does not match the frame")
    wsum, cx, cy = _weighted_sums(grown, img, bg, len(markers),
                                  float(markers.origin[0]), float(markers.origin[1]))
    out = markers.centroids.copy()
    ok = wsum > 0
    out[ok, 0] = cx[ok] / wsum[ok]
    out[ok, 1] = cy[ok] / wsum[ok]
    return replace(markers, centroids=out)


def track_markers(ref: MarkerSet, cur: MarkerSet, gate_px: float,
                  ref_tree: Optional[cKDTree] = None) -> DisplacementField:
    """Match each current marker to its nearest reference marker within the gate.

    When several current markers claim one reference marker the nearest keeps
    it and the rest stay unmatched. ``ref_tree`` may carry a prebuilt k-d tree
    over ``ref.centroids``.
    """
    empty = np.zeros(0, dtype=np.int64)
    if len(ref) == 0 or len(cur) == 0:
        return DisplacementField(empty, empty, np.zeros((0, 2)), np.zeros((0, 2)),
                                 ref.ids.copy(), cur.ids.copy())
    tree = ref_tree if ref_tree is not None else cKDTree(ref.centroids)
    dist, nearest = tree.query(cur.centroids, k=1, distance_upper_bound=gate_px)
    cand = np.flatnonzero(np.isfinite(dist) & (dist < gate_px))
    cand = cand[np.argsort(dist[cand], kind="stable")]
    _, first = np.unique(nearest[cand], return_index=True)
    winners = np.sort(cand[first])
    ref_idx = nearest[winners]
    order = np.argsort(ref.ids[ref_idx], kind="stable")
    winners, ref_idx = winners[order], ref_idx[order]

    matched_ref = np.zeros(len(ref), dtype=bool)
    matched_ref[ref_idx] = True
    matched_cur = np.zeros(len(cur), dtype=bool)
    matched_cur[winners] = True
    return DisplacementField(
        marker_ids=ref.ids[ref_idx],
        cur_ids=cur.ids[winners],
        ref_px=ref.centroids[ref_idx],
        cur_px=cur.centroids[winners],
        unmatched_ref_ids=ref.ids[~matched_ref],
        unmatched_cur_ids=cur.ids[~matched_cur],
    )
