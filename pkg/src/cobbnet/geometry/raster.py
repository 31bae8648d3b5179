"""Ground-truth segmentation masks from landmarks.

Labels: 0 background, 1 bone (vertebra quads), 2 gap (the quad between a
vertebra's bottom edge and the next vertebra's top edge). Bone wins where
the two overlap. Pixels are sampled at their centers ``(c + 0.5, r + 0.5)``
with the even-odd rule.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..tensor import Shape2D
from .landmarks import LandmarkSet, LandmarkWarning

BACKGROUND, BONE, GAP = 0, 1, 2
# label -> 8-bit graymap level
PGM_LEVELS = {BACKGROUND: 0, GAP: 128, BONE: 255}


def fill_polygon(mask: np.ndarray, poly, value) -> None:
    """Scanline even-odd fill of ``poly`` ((k, 2) of x, y) into ``mask`` in place."""
    poly = np.asarray(poly, dtype=np.float64)
    h, w = mask.shape
    ys = poly[:, 1]
    r0 = max(int(np.floor(ys.min() - 0.5)), 0)
    r1 = min(int(np.ceil(ys.max() - 0.5)), h - 1)
    if r1 < r0:
        return
    centers = np.arange(w) + 0.5
    k = len(poly)
    for r in range(r0, r1 + 1):
        y = r + 0.5
        xs = []
        for i in range(k):
            xi, yi = poly[i]
            xj, yj = poly[i - 1]
            if (yi > y) != (yj > y):
                xs.append((xj - xi) * (y - yi) / (yj - yi) + xi)
        xs.sort()
        for x0, x1 in zip(xs[::2], xs[1::2]):
            mask[r, (centers >= x0) & (centers < x1)] = value


def vertebra_polygon(corners) -> np.ndarray:
    tl, tr, bl, br = corners
    return np.array([tl, tr, br, bl])


def gap_polygon(upper, lower) -> np.ndarray:
    """Quad between ``upper``'s bottom edge and ``lower``'s top edge."""
    return np.array([upper[2], upper[3], lower[1], lower[0]])


def rasterize_mask(lm: LandmarkSet, shape: Shape2D) -> np.ndarray:
    """(H, W) uint8 label grid for a landmark set."""
    pts = lm.points
    bound = np.array([shape.width, shape.height], dtype=np.float64)
    clipped = np.clip(pts, 0.0, bound)
    if not np.array_equal(clipped, pts):
        warnings.warn("landmarks outside the image were clipped", LandmarkWarning, stacklevel=2)
    mask = np.zeros((shape.height, shape.width), dtype=np.uint8)
    for i in range(len(clipped) - 1):
        fill_polygon(mask, gap_polygon(clipped[i], clipped[i + 1]), GAP)
    for corners in clipped:
        fill_polygon(mask, vertebra_polygon(corners), BONE)
    return mask


def mask_to_levels(mask: np.ndarray) -> np.ndarray:
    out = np.zeros(mask.shape, dtype=np.uint8)
    for label, level in PGM_LEVELS.items():
        out[mask == label] = level
    return out


def levels_to_mask(levels: np.ndarray) -> np.ndarray:
    levels = np.asarray(levels)
    known = np.isin(levels, list(PGM_LEVELS.values()))
    if not np.all(known):
        raise ValueError(f"unexpected mask levels {sorted(set(np.unique(levels[~known]).tolist()))}")
    out = np.zeros(levels.shape, dtype=np.uint8)
    for label, level in PGM_LEVELS.items():
        out[levels == level] = label
    return out
