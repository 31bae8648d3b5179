"""Grayscale images: binary PGM I/O, intensity preprocessing and augmentation.

Sampling convention: pixel ``(r, c)`` covers ``[c, c+1) x [r, r+1)`` and its
center sits at ``(c + 0.5, r + 0.5)``. Landmark coordinates use the same
continuous frame, so geometric transforms move images and landmarks together.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .geometry.landmarks import LandmarkSet
from .tensor import Shape2D


class ImageError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray  # (H, W) float64
    maxval: float = 255

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError(f"pixels must be a non-empty 2-D grid, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> Shape2D:
        return Shape2D(*self.pixels.shape)

    def with_pixels(self, pixels, maxval=None) -> "GrayImage":
        return GrayImage(pixels, self.maxval if maxval is None else maxval)


# --------------------------------------------------------------------------
# PGM (P5)

_HEADER = re.compile(rb"P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def read_pgm(data: bytes) -> GrayImage:
    """Decode a binary (P5) graymap, 8- or 16-bit."""
    if data[:2] != b"P5":
        raise ImageError(f"unsupported format {data[:2]!r}: only binary P5 graymaps are read")
    m = _HEADER.match(data)
    if not m:
        raise ImageError("malformed PGM header")
    w, h, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise ImageError(f"maxval {maxval} out of range 1..65535")
    if w < 1 or h < 1:
        raise ImageError(f"bad dimensions {w}x{h}")
    dtype = ">u1" if maxval < 256 else ">u2"
    nbytes = w * h * np.dtype(dtype).itemsize
    payload = data[m.end() : m.end() + nbytes]
    if len(payload) < nbytes:
        raise ImageError(f"truncated payload: {len(payload)} of {nbytes} bytes")
    px = np.frombuffer(payload, dtype=dtype).reshape(h, w).astype(np.float64)
    if px.max() > maxval:
        raise ImageError("pixel value exceeds maxval")
    return GrayImage(px, maxval)


def write_pgm(img: GrayImage) -> bytes:
    """Encode as P5; pixels are rounded and clipped to ``[0, maxval]``."""
    maxval = int(img.maxval)
    if maxval != img.maxval or not 0 < maxval < 65536:
        raise ImageError(f"cannot write maxval {img.maxval}; convert to an integer range first")
    dtype = ">u1" if maxval < 256 else ">u2"
    px = np.clip(np.rint(img.pixels), 0, maxval).astype(dtype)
    h, w = px.shape
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + px.tobytes()


def load_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        return read_pgm(fh.read())


def save_pgm(path, img: GrayImage) -> None:
    with open(path, "wb") as fh:
        fh.write(write_pgm(img))


def to_8bit(img: GrayImage) -> GrayImage:
    """Rescale to an integral 0..255 image (for saving real-valued images)."""
    return GrayImage(np.rint(img.pixels / img.maxval * 255.0), 255)


# --------------------------------------------------------------------------
# intensity


def normalize_max(img: GrayImage) -> GrayImage:
    """Divide by the image's own maximum so the brightest pixel becomes 1."""
    peak = img.pixels.max()
    if peak <= 0:
        raise ImageError("cannot max-normalize an all-zero image")
    return GrayImage(img.pixels / peak, 1.0)


def hist_equalize(img: GrayImage, bins: int = 256) -> GrayImage:
    """Classic CDF remapping onto integer levels ``0..maxval``.

    Each pixel falls in bin ``min(floor(v / maxval * bins), bins - 1)`` and
    maps to ``round(maxval * (cdf - cdf_min) / (N - cdf_min))``. A
    single-level image is returned unchanged.
    """
    if img.maxval <= 0:
        raise ImageError("maxval must be positive")
    px = img.pixels
    idx = np.minimum((px / img.maxval * bins).astype(np.int64), bins - 1)
    idx = np.maximum(idx, 0)
    cdf = np.cumsum(np.bincount(idx.ravel(), minlength=bins))
    n = px.size
    cdf_min = cdf[cdf > 0][0]
    if n == cdf_min:
        return img
    lut = np.rint(img.maxval * (cdf - cdf_min) / (n - cdf_min))
    return GrayImage(lut[idx], img.maxval)


def add_noise(img: GrayImage, sigma: float, rng: np.random.Generator) -> GrayImage:
    if sigma <= 0:
        return img
    noisy = img.pixels + rng.normal(0.0, sigma * img.maxval, img.pixels.shape)
    return GrayImage(np.clip(noisy, 0, img.maxval), img.maxval)


# --------------------------------------------------------------------------
# geometry


def crop(img: GrayImage, x: int, y: int, w: int, h: int, landmarks: LandmarkSet | None = None):
    """Sub-image ``[y, y+h) x [x, x+w)``; landmarks are shifted by ``(-x, -y)``.

    Returns ``(image, landmarks)``.
    """
    H, W = img.pixels.shape
    if x < 0 or y < 0 or w < 1 or h < 1 or x + w > W or y + h > H:
        raise ImageError(f"crop rect ({x}, {y}, {w}, {h}) outside {W}x{H} image")
    out = img.with_pixels(img.pixels[y : y + h, x : x + w].copy())
    return out, (landmarks.translated(-x, -y) if landmarks is not None else None)


def _bilinear(px: np.ndarray, sx: np.ndarray, sy: np.ndarray, fill: float | None) -> np.ndarray:
    """Sample ``px`` at continuous index coordinates (column ``sx``, row ``sy``).

    With ``fill=None`` coordinates are clamped to the grid; otherwise samples
    outside it (beyond a 1e-9 tolerance) take ``fill``.
    """
    h, w = px.shape
    tol = 1e-9
    outside = (sx < -tol) | (sx > w - 1 + tol) | (sy < -tol) | (sy > h - 1 + tol)
    cx = np.clip(sx, 0, w - 1)
    cy = np.clip(sy, 0, h - 1)
    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = cx - x0
    fy = cy - y0
    top = px[y0, x0] * (1 - fx) + px[y0, x1] * fx
    bot = px[y1, x0] * (1 - fx) + px[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    if fill is not None:
        out = np.where(outside, fill, out)
    return out


def resize_bilinear(img: GrayImage, out: Shape2D, landmarks: LandmarkSet | None = None):
    """Half-pixel-aligned bilinear resize; landmarks scale by ``out/in`` per axis.

    Returns ``(image, landmarks)``.
    """
    h, w = img.pixels.shape
    sy = (np.arange(out.height) + 0.5) * (h / out.height) - 0.5
    sx = (np.arange(out.width) + 0.5) * (w / out.width) - 0.5
    gx, gy = np.meshgrid(sx, sy)
    px = _bilinear(img.pixels, gx, gy, None)
    lm = landmarks.scaled(out.width / w, out.height / h) if landmarks is not None else None
    return img.with_pixels(px), lm


def warp_about_center(img: GrayImage, matrix, fill: float = 0.0,
                      landmarks: LandmarkSet | None = None):
    """Apply the linear map ``matrix`` about the image center.

    Output pixels are inverse-mapped and sampled bilinearly; landmarks are
    forward-mapped with the same transform. Returns ``(image, landmarks)``.
    """
    m = np.asarray(matrix, dtype=np.float64)
    inv = np.linalg.inv(m)
    h, w = img.pixels.shape
    center = np.array([w / 2.0, h / 2.0])
    gx, gy = np.meshgrid(np.arange(w) + 0.5 - center[0], np.arange(h) + 0.5 - center[1])
    src_x = inv[0, 0] * gx + inv[0, 1] * gy + center[0] - 0.5
    src_y = inv[1, 0] * gx + inv[1, 1] * gy + center[1] - 0.5
    px = _bilinear(img.pixels, src_x, src_y, fill)
    lm = None
    if landmarks is not None:
        lm = landmarks.transformed(m, center - m @ center)
    return img.with_pixels(px), lm


def rotation_matrix(theta_deg: float) -> np.ndarray:
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    # exact values at multiples of 90 degrees keep quarter turns lossless
    if theta_deg % 90 == 0:
        c, s = float(round(c)), float(round(s))
    return np.array([[c, -s], [s, c]])


def rotate(img: GrayImage, theta: float, fill: float = 0.0, landmarks: LandmarkSet | None = None):
    """Rotate by ``theta`` degrees about the image center.

    Points move by ``[[cos, -sin], [sin, cos]]`` in (x, y) pixel
    coordinates; with y pointing down a positive angle turns clockwise
    on screen.
    """
    if abs(theta) > 180:
        raise ImageError(f"rotation {theta} outside [-180, 180]")
    return warp_about_center(img, rotation_matrix(theta), fill, landmarks)


def rescale(img: GrayImage, factor: float, fill: float = 0.0, landmarks: LandmarkSet | None = None):
    """Zoom by ``factor`` about the center, keeping the canvas size."""
    if factor <= 0:
        raise ImageError("scale factor must be positive")
    return warp_about_center(img, np.eye(2) * factor, fill, landmarks)


# --------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentParams:
    scale: tuple[float, float] = (0.85, 1.25)
    rotation: tuple[float, float] = (-45.0, 45.0)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scale[0] > self.scale[1] or self.scale[0] <= 0:
            raise ValueError(f"bad scale range {self.scale}")
        if self.rotation[0] > self.rotation[1]:
            raise ValueError(f"bad rotation range {self.rotation}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def draw_rng(seed: int, draw_index: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, draw_index)``."""
    key = (int(seed) % 2**64) | ((int(draw_index) % 2**64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def augment(img: GrayImage, landmarks: LandmarkSet, params: AugmentParams, draw_index: int):
    """Random rescale then rotation (then optional noise), applied jointly.

    Deterministic in ``(params.seed, draw_index)``. Returns ``(image, landmarks)``.
    """
    rng = draw_rng(params.seed, draw_index)
    s = rng.uniform(*params.scale) if params.scale[0] < params.scale[1] else params.scale[0]
    t = rng.uniform(*params.rotation) if params.rotation[0] < params.rotation[1] else params.rotation[0]
    m = rotation_matrix(t) @ (np.eye(2) * s)
    if np.array_equal(m, np.eye(2)):
        out, lm = img, landmarks
    else:
        out, lm = warp_about_center(img, m, 0.0, landmarks)
    out = add_noise(out, params.noise_sigma, rng)
    return out, lm
