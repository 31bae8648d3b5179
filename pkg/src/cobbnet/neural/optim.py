"""Gradient-descent updates and the learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


def sgd_step(theta, grad, lr: float) -> np.ndarray:
    """One plain gradient step ``theta - lr * grad``."""
    return np.asarray(theta, dtype=np.float64) - lr * np.asarray(grad, dtype=np.float64)


@dataclass(frozen=True)
class AdamState:
    """Moments and hyperparameters for one parameter tensor."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5

    @classmethod
    def like(cls, theta, **hyper) -> "AdamState":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(np.zeros_like(theta), np.zeros_like(theta), **hyper)


def adam_step(theta, grad, state: AdamState, lr: float | None = None):
    """Bias-corrected Adam with weight decay folded into the gradient as L2.

    ``lr`` overrides ``state.lr`` for this step (used by schedules).
    Returns ``(new_theta, new_state)``; inputs are not modified.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (theta.shape == grad.shape == state.m.shape == state.v.shape):
        raise ValueError(
            f"shape mismatch: theta {theta.shape}, grad {grad.shape}, moments {state.m.shape}"
        )
    g = grad + state.weight_decay * theta
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    step_lr = state.lr if lr is None else lr
    new_theta = theta - step_lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_theta, replace(state, m=m, v=v, step=t)


def cosine_lr(lr0: float, epoch: int, total_epochs: int) -> float:
    """Cosine annealing from ``lr0`` at epoch 0 to 0 at ``total_epochs``."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class Adam:
    """Adam over a dict of named parameter arrays, updated in place."""

    def __init__(self, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-5):
        self.hyper = dict(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
        self.states: dict[str, AdamState] = {}

    @property
    def lr(self):
        return self.hyper["lr"]

    def step(self, params: dict, grads: dict, lr: float | None = None) -> None:
        for name, theta in params.items():
            if name not in grads:
                continue
            state = self.states.get(name)
            if state is None:
                state = AdamState.like(theta, **self.hyper)
            new_theta, self.states[name] = adam_step(theta, grads[name], state, lr)
            theta[...] = new_theta


@dataclass
class SGD:
    lr: float = 1e-2
    weight_decay: float = 0.0
    states: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict, lr: float | None = None) -> None:
        step_lr = self.lr if lr is None else lr
        for name, theta in params.items():
            if name not in grads:
                continue
            g = grads[name] + self.weight_decay * theta
            theta[...] = sgd_step(theta, g, step_lr)
