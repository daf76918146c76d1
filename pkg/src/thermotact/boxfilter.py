"""Clamped-window box means.

Near the border the window is truncated to the part that lies inside the
image, so every output is a true average of in-image pixels.
"""

from functools import lru_cache

import cv2
import numpy as np


def _counts(n: int, radius: int) -> np.ndarray:
    idx = np.arange(n)
    return (np.minimum(idx + radius, n - 1) - np.maximum(idx - radius, 0) + 1).astype(float)


@lru_cache(maxsize=32)
def inverse_counts(h: int, w: int, radius: int, dtype: str) -> np.ndarray:
    inv = 1.0 / np.outer(_counts(h, radius), _counts(w, radius))
    inv = inv.astype(dtype)
    inv.flags.writeable = False
    return inv


def box_sum(image: np.ndarray, radius: int) -> np.ndarray:
    k = 2 * radius + 1
    return cv2.boxFilter(image, -1, (k, k), normalize=False, borderType=cv2.BORDER_CONSTANT)


def box_mean(image: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the ``(2r+1) x (2r+1)`` window clamped to the image."""
    image = np.asarray(image)
    if image.dtype not in (np.float32, np.float64):
        image = image.astype(np.float64)
    h, w = image.shape
    out = box_sum(image, radius)
    out *= inverse_counts(h, w, radius, image.dtype.str)
    return out
