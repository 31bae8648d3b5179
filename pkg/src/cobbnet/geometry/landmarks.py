"""Landmark sets and the CSV layouts they are stored in.

Two layouts are understood:

* ``interleaved`` -- 68 lines ``x,y`` in pixels, vertebra-major, corner
  order TL, TR, BL, BR (the canonical format);
* ``challenge-row`` -- 136 comma-separated values, all x then all y,
  optionally normalized to [0, 1] by image width/height.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..tensor import Shape2D

N_VERTEBRAE = 17
N_CORNERS = 4
N_POINTS = N_VERTEBRAE * N_CORNERS
CANONICAL_CORNERS = ("tl", "tr", "bl", "br")
LAYOUTS = ("interleaved", "challenge-row")


class LandmarkError(ValueError):
    pass


class LandmarkWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """17 vertebrae x 4 corners (TL, TR, BL, BR) of ``(x, y)`` pixel coordinates."""

    points: np.ndarray  # (17, 4, 2)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.size != N_POINTS * 2:
            raise LandmarkError(f"expected {N_POINTS} points, got {pts.size // 2}")
        pts = pts.reshape(N_VERTEBRAE, N_CORNERS, 2)
        if not np.all(np.isfinite(pts)):
            raise LandmarkError("landmark coordinates must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_flat(cls, xy) -> "LandmarkSet":
        return cls(np.asarray(xy, dtype=np.float64).reshape(N_VERTEBRAE, N_CORNERS, 2))

    @property
    def flat(self) -> np.ndarray:
        """(68, 2) view in file order."""
        return self.points.reshape(N_POINTS, 2)

    def centroids(self) -> np.ndarray:
        return self.points.mean(axis=1)

    def transformed(self, matrix, offset=(0.0, 0.0)) -> "LandmarkSet":
        """Apply ``p -> matrix @ p + offset`` to every point."""
        m = np.asarray(matrix, dtype=np.float64)
        return LandmarkSet(self.flat @ m.T + np.asarray(offset, dtype=np.float64))

    def translated(self, dx: float, dy: float) -> "LandmarkSet":
        return LandmarkSet(self.flat + np.array([dx, dy]))

    def scaled(self, sx: float, sy: float) -> "LandmarkSet":
        return LandmarkSet(self.flat * np.array([sx, sy]))

    def check_order(self) -> bool:
        """Warn (not raise) when vertebra centroids are not ordered top to bottom."""
        ys = self.centroids()[:, 1]
        ok = bool(np.all(np.diff(ys) >= 0))
        if not ok:
            warnings.warn("vertebra centroids are not monotone top-to-bottom", LandmarkWarning,
                          stacklevel=2)
        return ok

    def __eq__(self, other):
        return isinstance(other, LandmarkSet) and np.array_equal(self.points, other.points)


def _tokens(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        for tok in line.split(","):
            tok = tok.strip()
            if tok:
                yield lineno, tok


def _number(lineno, tok):
    try:
        value = float(tok)
    except ValueError:
        raise LandmarkError(f"line {lineno}: non-numeric value {tok!r}") from None
    if not math.isfinite(value):
        raise LandmarkError(f"line {lineno}: non-finite value {tok!r}")
    return value


def parse_landmarks(text: str, layout: str = "interleaved", normalized: bool = False,
                    image: Shape2D | None = None,
                    corner_order: tuple[str, ...] = CANONICAL_CORNERS) -> LandmarkSet:
    """Parse landmark text into pixel coordinates.

    ``normalized`` values are multiplied by ``image.width`` / ``image.height``.
    ``corner_order`` names the per-vertebra order used in the file; points
    are reordered to TL, TR, BL, BR.
    """
    if layout not in LAYOUTS:
        raise LandmarkError(f"unknown layout {layout!r}")
    if normalized and image is None:
        raise LandmarkError("normalized landmarks need the image shape")
    if layout == "interleaved":
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise LandmarkError(f"line {lineno}: expected 'x,y', got {line.strip()!r}")
            rows.append([_number(lineno, p) for p in parts])
            if len(rows) > N_POINTS:
                raise LandmarkError(f"line {lineno}: more than {N_POINTS} points")
        if len(rows) != N_POINTS:
            raise LandmarkError(f"expected {N_POINTS} points, got {len(rows)}")
        xy = np.array(rows)
    else:
        values = [_number(lineno, tok) for lineno, tok in _tokens(text)]
        if len(values) != 2 * N_POINTS:
            raise LandmarkError(f"challenge-row layout needs {2 * N_POINTS} values, got {len(values)}")
        xy = np.column_stack([values[:N_POINTS], values[N_POINTS:]])
    if normalized:
        xy = xy * np.array([image.width, image.height], dtype=np.float64)
    if tuple(corner_order) != CANONICAL_CORNERS:
        if sorted(corner_order) != sorted(CANONICAL_CORNERS):
            raise LandmarkError(f"corner_order must be a permutation of {CANONICAL_CORNERS}")
        perm = [list(corner_order).index(c) for c in CANONICAL_CORNERS]
        xy = xy.reshape(N_VERTEBRAE, N_CORNERS, 2)[:, perm].reshape(N_POINTS, 2)
    return LandmarkSet.from_flat(xy)


def format_landmarks(lm: LandmarkSet, layout: str = "interleaved", normalized: bool = False,
                     image: Shape2D | None = None) -> str:
    """Inverse of :func:`parse_landmarks`; floats use shortest round-trip repr."""
    xy = lm.flat
    if normalized:
        if image is None:
            raise LandmarkError("normalized output needs the image shape")
        xy = xy / np.array([image.width, image.height], dtype=np.float64)
    if layout == "interleaved":
        return "".join(f"{float(x)!r},{float(y)!r}\n" for x, y in xy)
    if layout == "challenge-row":
        return ",".join(repr(float(v)) for v in np.concatenate([xy[:, 0], xy[:, 1]])) + "\n"
    raise LandmarkError(f"unknown layout {layout!r}")


def read_landmarks(path, **kwargs) -> LandmarkSet:
    with open(path, encoding="utf-8") as fh:
        try:
            return parse_landmarks(fh.read(), **kwargs)
        except LandmarkError as exc:
            raise LandmarkError(f"{path}: {exc}") from None


def write_landmarks(path, lm: LandmarkSet, **kwargs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_landmarks(lm, **kwargs))
