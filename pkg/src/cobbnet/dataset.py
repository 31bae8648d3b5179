"""Records, splits, batch assembly and the synthetic spine generator.

A dataset directory looks like::

    images/<id>.pgm
    landmarks/<id>.csv     (optional; interleaved x,y layout)
    angles/<id>.csv        (optional; one line angle1,angle2,angle3)

Angles missing on disk are recomputed from the landmarks.
"""

from __future__ import annotations

import enum
import functools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import anglesio, imaging
from .geometry.cobb import CobbTriple, cobb_angles
from .geometry.landmarks import (LandmarkError, LandmarkSet, N_VERTEBRAE, read_landmarks,
                                 write_landmarks)
from .geometry.raster import fill_polygon, rasterize_mask, vertebra_polygon
from .tensor import Shape2D

log = logging.getLogger(__name__)

DEFAULT_SIZE = Shape2D(512, 256)
ANGLE_SCALE = 90.0
TILT_GAIN = 3.0


class DatasetError(ValueError):
    pass


class InputKind(str, enum.Enum):
    IMG = "img"
    IMG_MASK = "img+mask"
    MASK = "mask"

    @property
    def channels(self) -> int:
        return 2 if self is InputKind.IMG_MASK else 1


@dataclass(frozen=True)
class Record:
    id: str
    image: Path
    landmarks: Path | None = None
    angles: CobbTriple | None = None


@dataclass
class Batch:
    ids: list[str]
    inputs: np.ndarray  # (B, C, H, W)
    targets: np.ndarray | None  # (B, 3), angles / 90
    domain: np.ndarray | None = None  # (B,) in {0, 1}


def scan(root, training: bool = True, rejects: list | None = None) -> list[Record]:
    """Pair images with landmark and angle files by file stem.

    In training mode images lacking both landmarks and angles (or with
    unreadable ones) are left out and reported into ``rejects`` as
    ``{"id", "reason"}`` dicts.
    """
    root = Path(root)
    img_dir = root / "images"
    if not img_dir.is_dir():
        return []
    records = []
    for img in sorted(img_dir.glob("*.pgm")):
        rid = img.stem
        lm_path = root / "landmarks" / f"{rid}.csv"
        ang_path = root / "angles" / f"{rid}.csv"
        lm_path = lm_path if lm_path.is_file() else None
        angles = None
        try:
            if ang_path.is_file():
                angles = anglesio.read_triple(ang_path)
            elif lm_path is not None:
                angles = cobb_angles(read_landmarks(lm_path)).angles
        except (ValueError, OSError) as exc:
            if training:
                _reject(rejects, rid, str(exc))
                continue
        if training and angles is None:
            _reject(rejects, rid, "no landmarks and no angles")
            continue
        records.append(Record(rid, img, lm_path, angles))
    return sorted(records, key=lambda r: r.id)


def _reject(rejects, rid, reason):
    log.warning("rejecting %s: %s", rid, reason)
    if rejects is not None:
        rejects.append({"id": rid, "reason": reason})


def write_rejects(path, rejects) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rejects:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def split(records: Sequence[Record], train_count: int, seed: int = 0):
    """Seeded shuffle; the first ``train_count`` go to training."""
    if not 0 <= train_count <= len(records):
        raise DatasetError(f"train_count {train_count} outside 0..{len(records)}")
    order = np.random.default_rng(seed).permutation(len(records))
    shuffled = [records[i] for i in order]
    return shuffled[:train_count], shuffled[train_count:]


def train_count_for(total: int, fraction: float = 481 / 609) -> int:
    """Training share matching the 481/128 proportion by default."""
    return int(round(total * fraction))


# --------------------------------------------------------------------------
# per-record preprocessing


def _stamp(path: str):
    st = Path(path).stat()
    return path, st.st_mtime_ns, st.st_size


@functools.lru_cache(maxsize=4096)
def _cached_image(stamp) -> imaging.GrayImage:
    img = imaging.load_pgm(stamp[0])
    return imaging.normalize_max(imaging.hist_equalize(img))


@functools.lru_cache(maxsize=4096)
def _cached_landmarks(stamp) -> LandmarkSet:
    return read_landmarks(stamp[0])


def _base_image(path: str) -> imaging.GrayImage:
    """Equalized, max-normalized image (cached per file version; read-only)."""
    return _cached_image(_stamp(path))


def _landmarks(path: str) -> LandmarkSet:
    return _cached_landmarks(_stamp(path))


def prepare(record: Record, kind: InputKind, size: Shape2D,
            augment: imaging.AugmentParams | None = None, draw_index: int = 0) -> np.ndarray:
    """(C, H, W) input array for one record."""
    kind = InputKind(kind)
    img = _base_image(str(record.image))
    lm = _landmarks(str(record.landmarks)) if record.landmarks is not None else None
    if kind is not InputKind.IMG and lm is None:
        raise DatasetError(f"{record.id}: input kind {kind.value} needs landmarks")
    if augment is not None:
        if lm is None:
            raise DatasetError(f"{record.id}: augmentation needs landmarks")
        img, lm = imaging.augment(img, lm, augment, draw_index)
    if img.pixels.shape != (size.height, size.width):
        img, lm = imaging.resize_bilinear(img, size, lm)
    planes = []
    if kind is not InputKind.MASK:
        planes.append(img.pixels)
    if kind is not InputKind.IMG:
        planes.append(rasterize_mask(lm, size).astype(np.float64) / 2.0)
    return np.stack(planes)


def _draw_index(epoch: int, ordinal: int) -> int:
    return (int(epoch) << 32) | int(ordinal)


def make_batches(records: Sequence[Record], kind: InputKind, size: Shape2D, batch: int,
                 augment: imaging.AugmentParams | None = None, seed: int = 0, epoch: int = 0,
                 shuffle: bool = True, rejects: list | None = None) -> Iterator[Batch]:
    """Yield batches for one epoch.

    The record order is a seeded permutation of ``(seed, epoch)`` when
    ``shuffle`` is set. Records that cannot be prepared are reported into
    ``rejects`` and skipped.
    """
    if batch < 1:
        raise DatasetError("batch size must be >= 1")
    kind = InputKind(kind)
    order = list(range(len(records)))
    if shuffle:
        order = list(np.random.default_rng([seed, epoch]).permutation(len(records)))
    ids, xs, ys = [], [], []
    for ordinal, i in enumerate(order):
        rec = records[i]
        try:
            x = prepare(rec, kind, size, augment, _draw_index(epoch, ordinal))
        except (DatasetError, LandmarkError, imaging.ImageError, OSError) as exc:
            _reject(rejects, rec.id, str(exc))
            continue
        ids.append(rec.id)
        xs.append(x)
        ys.append(None if rec.angles is None else np.asarray(rec.angles) / ANGLE_SCALE)
        if len(xs) == batch:
            yield _batch(ids, xs, ys)
            ids, xs, ys = [], [], []
    if xs:
        yield _batch(ids, xs, ys)


def _batch(ids, xs, ys) -> Batch:
    targets = None if any(y is None for y in ys) else np.stack(ys)
    return Batch(list(ids), np.stack(xs), targets)


# --------------------------------------------------------------------------
# synthetic spines


def _synth_landmarks(rng: np.random.Generator, size: Shape2D) -> LandmarkSet:
    h, w = size.height, size.width
    top, bottom = 0.07 * h, 0.93 * h
    pitch = (bottom - top) / N_VERTEBRAE
    half_h = 0.36 * pitch
    half_w = 0.15 * w
    max_tilt = math.radians(40.0)
    while True:
        # lateral offset of the centerline as a cubic in u in [-1, 1]
        coef = rng.normal(0.0, 1.0, 3) * np.array([0.35, 0.25, 0.3])
        u = np.linspace(-1.0, 1.0, N_VERTEBRAE)
        ys = top + pitch * (np.arange(N_VERTEBRAE) + 0.5)
        span = (bottom - top) / 2.0
        offset = coef[0] * u + coef[1] * (u**2 - 1.0 / 3.0) + coef[2] * (u**3 - 0.6 * u)
        xs = w / 2.0 + 0.25 * w * offset
        # d(offset)/du scaled into pixels per pixel of height
        slope = 0.25 * w * (coef[0] + 2 * coef[1] * u + coef[2] * (3 * u**2 - 0.6)) / span
        # endplates tilt more steeply than the centerline bends (wedged vertebrae)
        tilt = -np.arctan(TILT_GAIN * slope) + rng.normal(0.0, math.radians(1.0), N_VERTEBRAE)
        if np.abs(tilt).max() > max_tilt:
            continue
        c, s = np.cos(tilt), np.sin(tilt)
        corners = []
        for k in range(N_VERTEBRAE):
            along = np.array([c[k], s[k]])
            across = np.array([-s[k], c[k]])
            center = np.array([xs[k], ys[k]])
            corners.append([center - half_w * along - half_h * across,
                            center + half_w * along - half_h * across,
                            center - half_w * along + half_h * across,
                            center + half_w * along + half_h * across])
        pts = np.array(corners)
        margin = 1.0
        if (pts[..., 0].min() < margin or pts[..., 0].max() > w - margin
                or pts[..., 1].min() < margin or pts[..., 1].max() > h - margin):
            continue
        lm = LandmarkSet(pts)
        if cobb_angles(lm).angles.mt < 3.0:
            continue
        return lm


def _synth_image(rng: np.random.Generator, lm: LandmarkSet, size: Shape2D) -> imaging.GrayImage:
    px = rng.integers(0, 26, (size.height, size.width)).astype(np.float64)
    px += np.linspace(0.0, 20.0, size.height)[:, None]
    layer = np.zeros(px.shape, dtype=np.uint8)
    for corners in lm.points:
        layer[:] = 0
        fill_polygon(layer, vertebra_polygon(corners), 1)
        level = rng.integers(150, 231)
        px = np.where(layer == 1, level + rng.integers(-10, 11, px.shape), px)
    return imaging.GrayImage(np.clip(np.rint(px), 0, 255), 255)


def synth_generate(n: int, seed: int, size: Shape2D, outdir) -> list[Record]:
    """Write ``n`` synthetic spine records under ``outdir``.

    Ground-truth angles are the Cobb angles of the generated landmarks,
    stored with 10 decimals.
    """
    if n < 1:
        raise DatasetError("n must be >= 1")
    out = Path(outdir)
    for sub in ("images", "landmarks", "angles"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        rid = f"synth_{i:04d}"
        lm = _synth_landmarks(rng, size)
        img = _synth_image(rng, lm, size)
        angles = cobb_angles(lm).angles
        imaging.save_pgm(out / "images" / f"{rid}.pgm", img)
        write_landmarks(out / "landmarks" / f"{rid}.csv", lm)
        anglesio.write_triple(out / "angles" / f"{rid}.csv", angles, decimals=10)
        records.append(Record(rid, out / "images" / f"{rid}.pgm",
                              out / "landmarks" / f"{rid}.csv",
                              anglesio.read_triple(out / "angles" / f"{rid}.csv")))
    return records
