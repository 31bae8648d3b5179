"""Layer stacks, backpropagation and the training epoch."""

from __future__ import annotations

import logging
from typing import Iterable, Sequence

import numpy as np

from . import losses
from .layers import (ConfigError, FC, GradReversal, Layer, NumericError, SoftmaxHead,
                     layer_from_config)

log = logging.getLogger(__name__)


class Network:
    """A validated stack of layers with an optional domain-classifier branch.

    The branch (gradient reversal -> fc(2) -> softmax) taps the output of
    layer ``branch_at``. Parameters are addressed as ``"<layer>.<name>"``
    for the trunk and ``"domain.<layer>.<name>"`` for the branch.
    """

    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int], seed: int = 0,
                 branch_at: int | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = seed
        rng = np.random.default_rng(seed)
        shape = self.input_shape
        self.shapes = [shape]
        for i, layer in enumerate(self.layers):
            try:
                out_shape = layer.output_shape(shape)
            except ConfigError as exc:
                raise ConfigError(f"layer {i} ({layer.kind}): {exc}") from exc
            layer.init_params(shape, rng)
            shape = out_shape
            self.shapes.append(shape)
        self.branch_at = branch_at
        self.domain_layers: list[Layer] = []
        if branch_at is not None:
            if not 0 <= branch_at < len(self.layers):
                raise ConfigError(f"branch_at {branch_at} outside the layer stack")
            feat = self.shapes[branch_at + 1]
            if len(feat) != 1:
                raise ConfigError(f"domain branch needs flat features, layer {branch_at} gives {feat}")
            self.domain_layers = [GradReversal(1.0), FC(2), SoftmaxHead()]
            for layer in self.domain_layers:
                layer.init_params(feat, rng)
                feat = layer.output_shape(feat)
        self._features = None

    @classmethod
    def from_config(cls, layer_cfgs: Iterable[dict], input_shape, seed=0, branch_at=None):
        return cls([layer_from_config(c) for c in layer_cfgs], input_shape, seed, branch_at)

    @property
    def output_shape(self):
        return self.shapes[-1]

    def layer_configs(self) -> list[dict]:
        return [layer.config() for layer in self.layers]

    def _named(self, attr: str) -> dict[str, np.ndarray]:
        named = {}
        for i, layer in enumerate(self.layers):
            for k, v in getattr(layer, attr).items():
                named[f"{i}.{k}"] = v
        for i, layer in enumerate(self.domain_layers):
            for k, v in getattr(layer, attr).items():
                named[f"domain.{i}.{k}"] = v
        return named

    def parameters(self) -> dict[str, np.ndarray]:
        return self._named("params")

    def gradients(self) -> dict[str, np.ndarray]:
        return self._named("grads")

    def buffers(self) -> dict[str, np.ndarray]:
        return self._named("buffers")

    def has_batchnorm(self) -> bool:
        return any(layer.kind == "batchnorm" for layer in self.layers)

    def forward(self, x, train: bool = False) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        self._features = None
        for i, layer in enumerate(self.layers):
            out = layer.forward(out, train)
            if not np.all(np.isfinite(out)):
                raise NumericError(f"non-finite output from layer {i} ({layer.kind})")
            if i == self.branch_at:
                self._features = out
        return out

    def forward_domain(self, train: bool = False) -> np.ndarray:
        """Domain probabilities for the features cached by the last forward."""
        if self._features is None:
            raise ConfigError("forward_domain needs a prior forward with a domain branch")
        h = self._features
        for layer in self.domain_layers:
            h = layer.forward(h, train)
        return h

    def backward(self, grad, domain_grad=None) -> np.ndarray:
        """Backpropagate; fills each layer's ``grads`` and returns d(loss)/d(input)."""
        for layer in self.layers + self.domain_layers:
            layer.grads.clear()
        g = grad
        if domain_grad is not None:
            dg = domain_grad
            for layer in reversed(self.domain_layers):
                dg = layer.backward(dg)
        for i in reversed(range(len(self.layers))):
            if domain_grad is not None and i == self.branch_at:
                g = g + dg
            g = self.layers[i].backward(g)
        return g

    def predict(self, x, batch_size: int = 32) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        outs = [self.forward(x[i : i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)


def _domain_loss(probs, labels):
    """Mean classification CE over rows and its gradient w.r.t. ``probs``."""
    onehot = np.eye(2)[labels.astype(int)]
    n = len(labels)
    value = sum(losses.ce_classification(p, y) for p, y in zip(probs, onehot)) / n
    grad = np.stack([losses.ce_classification_grad(p, y) for p, y in zip(probs, onehot)]) / n
    return value, grad


def train_step(net: Network, inputs, targets, optimizer, lr=None, lam: float = 0.0,
               target_inputs=None) -> losses.LossReport:
    """Forward, loss, backprop, parameter update on one batch."""
    inputs = np.asarray(inputs, dtype=np.float64)
    b = len(inputs)
    use_domain = lam > 0 and target_inputs is not None and net.domain_layers
    x = np.concatenate([inputs, target_inputs]) if use_domain else inputs
    out = net.forward(x, train=True)
    task = losses.mse(targets, out[:b])
    if not np.isfinite(task):
        raise NumericError(f"non-finite loss from layer {len(net.layers) - 1} ({net.layers[-1].kind})")
    grad = np.zeros_like(out)
    grad[:b] = losses.mse_grad(targets, out[:b])
    domain_value, domain_grad = 0.0, None
    if use_domain:
        probs = net.forward_domain(train=True)
        labels = np.concatenate([np.zeros(b), np.ones(len(target_inputs))])
        domain_value, domain_grad = _domain_loss(probs, labels)
        domain_grad = lam * domain_grad
    net.backward(grad, domain_grad)
    optimizer.step(net.parameters(), net.gradients(), lr)
    return losses.combined(task, domain_value, lam)


def train_epoch(net: Network, batches, optimizer, lr=None, lam: float = 0.0,
                target_batches=None) -> losses.LossReport:
    """One pass over ``batches`` of ``(inputs, targets)``; returns sample-weighted mean losses.

    ``target_batches`` (unlabeled inputs) are cycled alongside when the
    domain branch is active.
    """
    batches = list(batches)
    if not batches:
        raise ValueError("train_epoch needs at least one batch")
    target_batches = list(target_batches or [])
    total = task = domain = 0.0
    for k, (inputs, targets) in enumerate(batches):
        if len(inputs) < 2 and net.has_batchnorm():
            log.warning("skipping batch %d of size 1 (batchnorm needs >= 2 samples)", k)
            continue
        tgt = target_batches[k % len(target_batches)] if target_batches else None
        report = train_step(net, inputs, targets, optimizer, lr, lam, tgt)
        n = len(inputs)
        total += n
        task += report.task * n
        domain += report.domain * n
    if total == 0:
        raise ValueError("no trainable batches in epoch")
    return losses.combined(task / total, domain / total, lam)
