"""Evaluation metrics for Cobb-angle regression and mask segmentation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry.raster import BACKGROUND, BONE, GAP

CLASS_NAMES = {BACKGROUND: "bg", BONE: "bone", GAP: "gap"}


class MetricError(ValueError):
    pass


def _paired(preds, gts):
    p = np.asarray(preds, dtype=np.float64)
    g = np.asarray(gts, dtype=np.float64)
    if p.shape != g.shape:
        raise MetricError(f"prediction/ground-truth shape mismatch: {p.shape} vs {g.shape}")
    if p.ndim != 2 or p.shape[0] == 0 or p.shape[1] != 3:
        raise MetricError(f"expected a non-empty list of angle triples, got shape {p.shape}")
    return p, g


def smape_terms(preds, gts, ids: Sequence[str] | None = None) -> np.ndarray:
    """Per-image ``sum|X - Y| / sum(X + Y)`` over the three angles (a fraction)."""
    p, g = _paired(preds, gts)
    if np.any(p < 0) or np.any(g < 0):
        raise MetricError("SMAPE needs non-negative angles")
    num = np.abs(p - g).sum(axis=1)
    den = (p + g).sum(axis=1)
    bad = np.flatnonzero(den == 0)
    if bad.size:
        name = ids[bad[0]] if ids is not None else f"#{bad[0]}"
        raise MetricError(f"SMAPE denominator is zero for image {name}")
    return num / den


def smape(preds, gts, ids: Sequence[str] | None = None) -> float:
    """Symmetric mean absolute percentage error, in percent."""
    terms = smape_terms(preds, gts, ids)
    return math.fsum(terms.tolist()) / len(terms) * 100.0


def per_angle_l1(preds, gts) -> tuple[float, float, float]:
    p, g = _paired(preds, gts)
    return tuple(float(v) for v in np.abs(p - g).mean(axis=0))


def mae(preds, gts) -> float:
    p, g = _paired(preds, gts)
    return float(np.abs(p - g).mean())


def iou(pred: np.ndarray, gt: np.ndarray, classes=(BACKGROUND, BONE, GAP)) -> dict:
    """Per-class intersection over union plus ``miou`` over classes present in either mask."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    out = {}
    for c in classes:
        a, b = pred == c, gt == c
        union = np.count_nonzero(a | b)
        if union:
            out[CLASS_NAMES.get(c, str(c))] = np.count_nonzero(a & b) / union
    out["miou"] = float(np.mean(list(out.values()))) if out else float("nan")
    return out


def dice_score(pred: np.ndarray, gt: np.ndarray, classes=(BACKGROUND, BONE, GAP)) -> dict:
    """Per-class ``2|A & B| / (|A| + |B|)``; classes empty in both masks are left out."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    out = {}
    for c in classes:
        a, b = pred == c, gt == c
        total = np.count_nonzero(a) + np.count_nonzero(b)
        if total:
            out[CLASS_NAMES.get(c, str(c))] = 2.0 * np.count_nonzero(a & b) / total
    return out


@dataclass
class EvalReport:
    n: int
    smape: float
    mae: float
    angle_l1: tuple[float, float, float]
    iou: dict | None = None
    dice: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "n": self.n,
            "smape": round(self.smape, 4),
            "mae": round(self.mae, 4),
            "angle_l1": [round(v, 4) for v in self.angle_l1],
        }
        if self.iou is not None:
            d["iou"] = {k: round(v, 4) for k, v in self.iou.items()}
        if self.dice is not None:
            d["dice"] = {k: round(v, 4) for k, v in self.dice.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_table(self) -> str:
        rows = [
            ("images", str(self.n)),
            ("SMAPE (%)", f"{self.smape:.4f}"),
            ("MAE (deg)", f"{self.mae:.4f}"),
            ("Angle1 L1", f"{self.angle_l1[0]:.4f}"),
            ("Angle2 L1", f"{self.angle_l1[1]:.4f}"),
            ("Angle3 L1", f"{self.angle_l1[2]:.4f}"),
        ]
        for name, values in (("IoU", self.iou), ("Dice", self.dice)):
            for k, v in (values or {}).items():
                rows.append((f"{name} {k}", f"{v:.4f}"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def evaluate(preds, gts, ids: Sequence[str] | None = None) -> EvalReport:
    p, g = _paired(preds, gts)
    return EvalReport(len(p), smape(p, g, ids), mae(p, g), per_angle_l1(p, g))
