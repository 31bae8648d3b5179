"""Loss functions and their gradients w.r.t. the prediction.

Cross-entropy losses floor probabilities at :data:`PROB_FLOOR` before the
log so that a zero probability gives a large finite loss instead of inf.
Segmentation-style inputs are laid out as ``[C, n]`` (classes x pixels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


class LossError(ValueError):
    pass


def _pair(a, b, name):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LossError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(y, y_hat) -> float:
    """Mean of squared differences over all elements."""
    y, y_hat = _pair(y, y_hat, "mse")
    return float(np.mean((y - y_hat) ** 2))


def mse_grad(y, y_hat) -> np.ndarray:
    y, y_hat = _pair(y, y_hat, "mse")
    return 2.0 * (y_hat - y) / y.size


def _check_one_hot(y, axis):
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=axis) == 1)):
        raise LossError("target must be one-hot along the class axis")


def ce_classification(p, y) -> float:
    """``-sum_c y_c log p_c`` for a single probability vector."""
    p, y = _pair(p, y, "ce_classification")
    _check_one_hot(y, axis=-1)
    return float(-np.sum(y * np.log(np.maximum(p, PROB_FLOOR))))


def ce_classification_grad(p, y) -> np.ndarray:
    p, y = _pair(p, y, "ce_classification")
    return np.where(p > PROB_FLOOR, -y / np.maximum(p, PROB_FLOOR), 0.0)


def ce_segmentation(p, y) -> float:
    """Pixel-averaged cross-entropy; ``p`` and ``y`` are ``[C, n]``."""
    return weighted_ce(p, y, np.ones(np.shape(p)[0]))


def ce_segmentation_grad(p, y) -> np.ndarray:
    return weighted_ce_grad(p, y, np.ones(np.shape(p)[0]))


def _class_weights(p, w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != p.shape[0]:
        raise LossError(f"need one weight per class ({p.shape[0]}), got {w.shape}")
    if np.any(w < 0):
        raise LossError("class weights must be non-negative")
    return w


def weighted_ce(p, y, w) -> float:
    p, y = _pair(p, y, "weighted_ce")
    if p.ndim != 2:
        raise LossError(f"expected [C, n] maps, got {p.shape}")
    _check_one_hot(y, axis=0)
    w = _class_weights(p, w)
    n = p.shape[1]
    return float(-np.sum(w[:, None] * y * np.log(np.maximum(p, PROB_FLOOR))) / n)


def weighted_ce_grad(p, y, w) -> np.ndarray:
    p, y = _pair(p, y, "weighted_ce")
    w = _class_weights(p, w)
    n = p.shape[1]
    return np.where(p > PROB_FLOOR, -w[:, None] * y / (n * np.maximum(p, PROB_FLOOR)), 0.0)


def soft_dice(p, y) -> float:
    """``1 - 2*sum(y*p) / sum(y + p)``, summed over classes and pixels.

    No smoothing term: an all-zero denominator is an error.
    """
    p, y = _pair(p, y, "soft_dice")
    denom = np.sum(y + p)
    if denom == 0:
        raise LossError("soft_dice: prediction and target are both all-zero")
    return float(1.0 - 2.0 * np.sum(y * p) / denom)


def soft_dice_grad(p, y) -> np.ndarray:
    p, y = _pair(p, y, "soft_dice")
    s = np.sum(y * p)
    t = np.sum(y + p)
    if t == 0:
        raise LossError("soft_dice: prediction and target are both all-zero")
    return -2.0 * y / t + 2.0 * s / t**2


@dataclass(frozen=True)
class LossReport:
    """Task loss, domain loss and their weighted sum ``task + lam * domain``."""

    task: float
    domain: float
    combined: float
    lam: float


def combined(task_loss: float, domain_loss: float, lam: float) -> LossReport:
    return LossReport(task_loss, domain_loss, task_loss + lam * domain_loss, lam)
