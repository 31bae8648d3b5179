"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .layers import MaxPool, ReLU
from .network import Network

# floor for the relative-error denominator; below this both gradients are treated as zero
REL_FLOOR = 1e-7


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(f: Callable[[], float], theta: np.ndarray, h: float = 1e-5,
                 indices=None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``theta`` (perturbed in place, then restored).

    With ``indices`` (flat positions) only those entries are computed; the rest stay 0.
    """
    grad = np.zeros_like(theta)
    flat, gflat = theta.reshape(-1), grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return grad


@dataclass
class GradCheckReport:
    tolerance: float
    h: float
    max_errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    failures: list[tuple[str, int, float, float, float]] = field(default_factory=list)
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "h": self.h,
            "tolerance": self.tolerance,
            "max_relative_error": self.max_errors,
            "checked": self.checked,
            "skipped_at_kinks": self.skipped,
            "failures": [
                {"param": p, "index": i, "analytic": a, "numeric": n, "rel_error": e}
                for p, i, a, n, e in self.failures
            ],
        }


def _kink_pattern(net: Network):
    """ReLU signs and maxpool winners of the last forward pass."""
    out = []
    for layer in net.layers:
        if isinstance(layer, ReLU):
            out.append(layer._x > 0)
        elif isinstance(layer, MaxPool):
            out.append(layer._idx.copy())
    return out


def _same(p, q) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(p, q))


def gradient_check(net: Network, x, y, loss: Callable, h: float = 1e-5,
                   tolerance: float = 1e-4, train: bool = True, max_per_param: int | None = None,
                   include_input: bool = False, seed: int = 0) -> GradCheckReport:
    """Compare backprop gradients of ``loss(net(x), y)`` with central differences.

    ``loss(out, y)`` must return ``(value, d value / d out)``. With
    ``max_per_param`` a seeded random subset of entries is checked for
    large tensors. Entries whose +-h perturbation flips a ReLU sign or a
    maxpool winner straddle a kink, where central differences say nothing
    about the derivative; they are skipped (and replaced by other entries
    when sampling) and counted in ``skipped``.
    """
    x = np.array(x, dtype=np.float64)
    saved = {k: v.copy() for k, v in net.buffers().items()}
    out = net.forward(x, train=train)
    base = _kink_pattern(net)
    _, g = loss(out, y)
    grad_x = net.backward(g)
    analytic = {k: v.copy() for k, v in net.gradients().items()}
    targets = dict(net.parameters())
    if include_input:
        targets["input"] = x
        analytic["input"] = grad_x

    def f():
        value = loss(net.forward(x, train=train), y)[0]
        return value, _same(_kink_pattern(net), base)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance, h)
    for name, theta in targets.items():
        if name not in analytic:
            continue
        flat = theta.reshape(-1)
        want = flat.size if max_per_param is None else min(max_per_param, flat.size)
        order = range(flat.size) if want == flat.size else rng.permutation(flat.size)
        sel, nums, skipped = [], [], 0
        for i in order:
            if len(sel) == want:
                break
            old = flat[i]
            flat[i] = old + h
            up, ok_up = f()
            flat[i] = old - h
            down, ok_down = f()
            flat[i] = old
            if not (ok_up and ok_down):
                skipped += 1
                continue
            sel.append(int(i))
            nums.append((up - down) / (2.0 * h))
        # restore the caches of the unperturbed point
        net.forward(x, train=train)
        order_idx = np.argsort(sel, kind="stable")
        sel = np.array(sel, dtype=np.int64)[order_idx]
        n = np.array(nums, dtype=np.float64)[order_idx]
        a = analytic[name].reshape(-1)[sel]
        err = relative_error(a, n)
        report.checked[name] = len(sel)
        report.skipped[name] = skipped
        report.max_errors[name] = float(err.max()) if err.size else 0.0
        for k in np.flatnonzero(err > tolerance):
            report.failures.append((name, int(sel[k]), float(a[k]), float(n[k]), float(err[k])))
    # train-mode passes move batchnorm running statistics; put them back
    for k, v in net.buffers().items():
        v[...] = saved[k]
    return report
