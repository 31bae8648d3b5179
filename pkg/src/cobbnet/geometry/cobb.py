"""Cobb angles from vertebra corner landmarks, plus angle post-processing.

Each vertebra gets a direction: the unit vector from the midpoint of its
left edge (TL, BL) to the midpoint of its right edge (TR, BR). Angles
between vertebrae are unsigned and folded into [0, 90] degrees.

The main-thoracic (MT) angle is the largest pairwise angle; its vertebra
pair ``(a, b)`` (smallest ``a``, then smallest ``b`` on ties) splits the
spine. The proximal-thoracic (PT) angle is the largest angle between
vertebra ``a`` and any vertebra above it, the thoracolumbar (TL) angle
the largest between ``b`` and any vertebra below.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .landmarks import LandmarkSet


class GeometryError(ValueError):
    pass


class CobbTriple(NamedTuple):
    """Angles in degrees; slot order is also the CSV column order."""

    pt: float
    mt: float
    tl: float


class CobbResult(NamedTuple):
    angles: CobbTriple
    apex_pair: tuple[int, int]


def vertebra_direction(corners) -> np.ndarray:
    """Unit vector from the left-edge midpoint to the right-edge midpoint.

    ``corners`` is a (4, 2) array in TL, TR, BL, BR order.
    """
    c = np.asarray(corners, dtype=np.float64)
    left = (c[0] + c[2]) / 2.0
    right = (c[1] + c[3]) / 2.0
    d = right - left
    norm = math.hypot(d[0], d[1])
    if norm == 0.0:
        raise GeometryError("degenerate vertebra: left and right edge midpoints coincide")
    return d / norm


def directions(lm: LandmarkSet) -> np.ndarray:
    """(17, 2) array of per-vertebra unit directions."""
    out = np.empty((lm.points.shape[0], 2))
    for i, corners in enumerate(lm.points):
        try:
            out[i] = vertebra_direction(corners)
        except GeometryError as exc:
            raise GeometryError(f"vertebra {i}: {exc}") from None
    return out


def pairwise_angle(d_i, d_j) -> float:
    """Unsigned angle in degrees between two unit directions, in [0, 90].

    Equal to ``acos(|d_i . d_j|)``, evaluated as ``atan2(|cross|, |dot|)``
    because acos loses about half the digits near 0 degrees.
    """
    dot = abs(d_i[0] * d_j[0] + d_i[1] * d_j[1])
    cross = abs(d_i[0] * d_j[1] - d_i[1] * d_j[0])
    return math.degrees(math.atan2(cross, dot))


def angle_matrix(dirs: np.ndarray) -> np.ndarray:
    """Symmetric (n, n) matrix of pairwise angles."""
    d = dirs.tolist()
    n = len(d)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = pairwise_angle(d[i], d[j])
    return out


def cobb_angles(lm: LandmarkSet) -> CobbResult:
    ang = angle_matrix(directions(lm))
    n = ang.shape[0]
    upper = np.where(np.triu(np.ones((n, n), dtype=bool), k=1), ang, -1.0)
    # argmax on the row-major flattening returns the first maximum: smallest a, then b
    a, b = divmod(int(np.argmax(upper)), n)
    mt = float(ang[a, b])
    pt = float(ang[: a + 1, a].max())
    tl = float(ang[b, b:].max())
    return CobbResult(CobbTriple(pt, mt, tl), (a, b))


def threshold_small_angles(t: Sequence[float], cutoff: float = 4.0) -> CobbTriple:
    """Zero every angle strictly below ``cutoff``."""
    return CobbTriple(*(0.0 if v < cutoff else float(v) for v in t))


def ensemble_mean(predictions: Sequence[Sequence[float]]) -> CobbTriple:
    """Slot-wise arithmetic mean of several predicted triples."""
    if len(predictions) == 0:
        raise ValueError("ensemble_mean needs at least one prediction")
    arr = np.asarray(predictions, dtype=np.float64).reshape(len(predictions), 3)
    # exact rational mean: order-independent and the identity on constant lists
    n = len(arr)
    return CobbTriple(*(float(sum(map(Fraction, arr[:, k].tolist())) / n) for k in range(3)))
