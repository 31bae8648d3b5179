"""Layers with explicit forward and backward passes.

Every functional pair works on batched arrays: images are ``(B, C, H, W)``
and vectors ``(B, D)``. Single samples (``(C, H, W)`` / ``(D,)``) are
accepted by the functional API and promoted to a batch of one.

Layer objects keep their parameters in ``params`` and the matching
gradients (filled by :meth:`Layer.backward`) in ``grads``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..tensor import ShapeError, conv_output_size


class ConfigError(ValueError):
    """Layer configuration or input shape does not fit."""


class NumericError(ArithmeticError):
    """Non-finite values appeared during a forward or loss computation."""


def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ConfigError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


# --------------------------------------------------------------------------
# convolution


def param_count(out_channels: int, in_channels: int, kernel: int) -> int:
    """Number of scalars in a conv layer: ``k_out * (n*n*k_in + 1)``."""
    return out_channels * (kernel * kernel * in_channels + 1)


def _conv_geometry(x, weight, stride, pad):
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ConfigError(f"kernels must be [k_out, k_in, n, n], got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ConfigError(f"input has {x.shape[1]} channels, kernels expect {weight.shape[1]}")
    n = weight.shape[2]
    try:
        ho = conv_output_size(x.shape[2], n, stride, pad)
        wo = conv_output_size(x.shape[3], n, stride, pad)
    except ShapeError as exc:
        raise ConfigError(str(exc)) from exc
    return n, ho, wo


def _windows(xp, n, stride, ho, wo):
    win = sliding_window_view(xp, (n, n), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def conv_forward(x, weight, bias, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate zero-padded ``x`` with each kernel and add its bias."""
    x, single = _batched(x, 4)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    n, ho, wo = _conv_geometry(x, weight, stride, pad)
    if bias.shape != (weight.shape[0],):
        raise ConfigError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, n, stride, ho, wo)  # (B, C, Ho, Wo, n, n)
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, K)
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv_backward(x, weight, grad_out, stride: int = 1, pad: int = 0):
    """Gradients of :func:`conv_forward` w.r.t. input, kernels and bias."""
    x, single = _batched(x, 4)
    weight = np.asarray(weight, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if single:
        grad_out = grad_out[None]
    n, ho, wo = _conv_geometry(x, weight, stride, pad)
    if grad_out.shape != (x.shape[0], weight.shape[0], ho, wo):
        raise ConfigError(
            f"grad_out shape {grad_out.shape} != {(x.shape[0], weight.shape[0], ho, wo)}"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, n, stride, ho, wo)
    grad_w = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))  # (K, C, n, n)
    grad_b = grad_out.sum(axis=(0, 2, 3))

    grad_xp = np.zeros_like(xp)
    for i in range(n):
        for j in range(n):
            # (B, Ho, Wo, C) contribution of kernel tap (i, j)
            contrib = np.tensordot(grad_out, weight[:, :, i, j], axes=([1], [0]))
            grad_xp[
                :, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride
            ] += contrib.transpose(0, 3, 1, 2)
    grad_x = grad_xp[:, :, pad : pad + x.shape[2], pad : pad + x.shape[3]] if pad else grad_xp
    grad_x = np.ascontiguousarray(grad_x)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


# --------------------------------------------------------------------------
# activations


def relu_forward(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, 0.0)


def relu_backward(x, grad_out) -> np.ndarray:
    # the derivative at exactly 0 is taken as 0
    return np.where(np.asarray(x) > 0, grad_out, 0.0)


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax received non-finite logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs, grad_out, axis: int = -1) -> np.ndarray:
    dot = (grad_out * probs).sum(axis=axis, keepdims=True)
    return probs * (grad_out - dot)


# --------------------------------------------------------------------------
# pooling (2x2 windows, stride 2)


def _pool_windows(x):
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"pooling needs even spatial dims, got {h}x{w}")
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(b, c, h // 2, w // 2, 4)


def _unpool(win_grad, shape):
    b, c, h, w = shape
    g = win_grad.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(g.reshape(b, c, h, w))


def maxpool_forward(x):
    """Non-overlapping 2x2 max pooling.

    Returns ``(out, argmax)``; ``argmax`` holds the row-major position
    (0..3) of the winner inside each window, first index on ties.
    """
    x, single = _batched(x, 4)
    win = _pool_windows(x)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if single:
        return out[0], idx[0]
    return out, idx


def maxpool_backward(grad_out, argmax, input_shape) -> np.ndarray:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    single = len(input_shape) == 3
    if single:
        grad_out, argmax, input_shape = grad_out[None], argmax[None], (1, *input_shape)
    win = np.zeros((*grad_out.shape, 4))
    np.put_along_axis(win, argmax[..., None], grad_out[..., None], axis=-1)
    g = _unpool(win, input_shape)
    return g[0] if single else g


def avgpool_forward(x) -> np.ndarray:
    x, single = _batched(x, 4)
    out = _pool_windows(x).mean(axis=-1)
    return out[0] if single else out


def avgpool_backward(grad_out, input_shape) -> np.ndarray:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    single = len(input_shape) == 3
    if single:
        grad_out, input_shape = grad_out[None], (1, *input_shape)
    win = np.repeat(grad_out[..., None] / 4.0, 4, axis=-1)
    g = _unpool(win, input_shape)
    return g[0] if single else g


# --------------------------------------------------------------------------
# fully connected


def fc_forward(x, weight, bias) -> np.ndarray:
    x, single = _batched(x, 2)
    weight = np.asarray(weight, dtype=np.float64)
    if x.shape[1] != weight.shape[1]:
        raise ConfigError(f"input width {x.shape[1]} != weight columns {weight.shape[1]}")
    out = x @ weight.T + bias
    return out[0] if single else out


def fc_backward(x, weight, grad_out):
    x, single = _batched(x, 2)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if single:
        grad_out = grad_out[None]
    grad_x = grad_out @ weight
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


# --------------------------------------------------------------------------
# batch normalization


def _bn_axes(x):
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise ConfigError(f"batchnorm expects (B, C, H, W) or (B, D), got {x.shape}")


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool,
                      momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel batch normalization.

    In train mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place by exponential moving average.
    Returns ``(out, cache)``; the cache feeds :func:`batchnorm_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    axes, bshape = _bn_axes(x)
    if train:
        if x.shape[0] < 2:
            raise ConfigError("batchnorm in train mode needs batch size >= 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return out, (xhat, inv_std, gamma, train)


def batchnorm_backward(grad_out, cache):
    """Returns ``(grad_x, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, train = cache
    axes, bshape = _bn_axes(xhat)
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    gxhat = grad_out * gamma.reshape(bshape)
    if not train:
        return gxhat * inv_std.reshape(bshape), grad_gamma, grad_beta
    m = xhat.size / xhat.shape[1]
    grad_x = (inv_std.reshape(bshape) / m) * (
        m * gxhat
        - gxhat.sum(axis=axes).reshape(bshape)
        - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
    )
    return grad_x, grad_gamma, grad_beta


# --------------------------------------------------------------------------
# gradient reversal


def grad_reversal_forward(x, lam: float = 1.0) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def grad_reversal_backward(grad_out, lam: float = 1.0) -> np.ndarray:
    return -lam * np.asarray(grad_out, dtype=np.float64)


# --------------------------------------------------------------------------
# layer objects


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def output_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def init_params(self, in_shape: tuple, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        return {"type": self.kind}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items() if k != "type")
        return f"{type(self).__name__}({args})"


class Conv(Layer):
    kind = "conv"

    def __init__(self, out_channels: int, kernel: int = 3, stride: int = 1, pad: int = 0):
        super().__init__()
        if out_channels < 1 or kernel < 1 or stride < 1 or pad < 0:
            raise ConfigError(f"bad conv settings {out_channels}/{kernel}/{stride}/{pad}")
        self.out_channels, self.kernel, self.stride, self.pad = out_channels, kernel, stride, pad

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ConfigError(f"conv expects (C, H, W) input, got {in_shape}")
        try:
            ho = conv_output_size(in_shape[1], self.kernel, self.stride, self.pad)
            wo = conv_output_size(in_shape[2], self.kernel, self.stride, self.pad)
        except ShapeError as exc:
            raise ConfigError(str(exc)) from exc
        return (self.out_channels, ho, wo)

    def init_params(self, in_shape, rng):
        fan_in = in_shape[0] * self.kernel**2
        self.params["weight"] = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), (self.out_channels, in_shape[0], self.kernel, self.kernel)
        )
        self.params["bias"] = np.zeros(self.out_channels)

    def param_count(self) -> int:
        return param_count(self.out_channels, self.params["weight"].shape[1], self.kernel)

    def forward(self, x, train=False):
        self._x = x
        return conv_forward(x, self.params["weight"], self.params["bias"], self.stride, self.pad)

    def backward(self, grad):
        gx, gw, gb = conv_backward(self._x, self.params["weight"], grad, self.stride, self.pad)
        self.grads["weight"], self.grads["bias"] = gw, gb
        return gx

    def config(self):
        return {"type": self.kind, "out": self.out_channels, "kernel": self.kernel,
                "stride": self.stride, "pad": self.pad}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._x = x
        return relu_forward(x)

    def backward(self, grad):
        return relu_backward(self._x, grad)


class MaxPool(Layer):
    kind = "maxpool"

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[1] % 2 or in_shape[2] % 2:
            raise ConfigError(f"maxpool needs (C, H, W) with even H, W; got {in_shape}")
        return (in_shape[0], in_shape[1] // 2, in_shape[2] // 2)

    def forward(self, x, train=False):
        self._shape = x.shape
        out, self._idx = maxpool_forward(x)
        return out

    def backward(self, grad):
        return maxpool_backward(grad, self._idx, self._shape)


class AvgPool(MaxPool):
    kind = "avgpool"

    def forward(self, x, train=False):
        self._shape = x.shape
        return avgpool_forward(x)

    def backward(self, grad):
        return avgpool_backward(grad, self._shape)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class FC(Layer):
    kind = "fc"

    def __init__(self, out: int):
        super().__init__()
        if out < 1:
            raise ConfigError(f"fc width must be >= 1, got {out}")
        self.out = out

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ConfigError(f"fc expects a flat (D,) input, got {in_shape}; add a flatten layer")
        return (self.out,)

    def init_params(self, in_shape, rng):
        self.params["weight"] = rng.normal(0.0, np.sqrt(2.0 / in_shape[0]), (self.out, in_shape[0]))
        self.params["bias"] = np.zeros(self.out)

    def forward(self, x, train=False):
        self._x = x
        return fc_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        gx, gw, gb = fc_backward(self._x, self.params["weight"], grad)
        self.grads["weight"], self.grads["bias"] = gw, gb
        return gx

    def config(self):
        return {"type": self.kind, "out": self.out}


class LinearHead(FC):
    """Plain linear output layer (no activation); the regression head."""

    kind = "linear_head"

    def init_params(self, in_shape, rng):
        # small init keeps early predictions near zero
        self.params["weight"] = rng.normal(0.0, 0.1 / np.sqrt(in_shape[0]), (self.out, in_shape[0]))
        self.params["bias"] = np.zeros(self.out)


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps

    def init_params(self, in_shape, rng):
        c = in_shape[0]
        self.params["gamma"] = np.ones(c)
        self.params["beta"] = np.zeros(c)
        self.buffers["running_mean"] = np.zeros(c)
        self.buffers["running_var"] = np.ones(c)

    def forward(self, x, train=False):
        out, self._cache = batchnorm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            train, self.momentum, self.eps,
        )
        return out

    def backward(self, grad):
        gx, gg, gb = batchnorm_backward(grad, self._cache)
        self.grads["gamma"], self.grads["beta"] = gg, gb
        return gx

    def config(self):
        return {"type": self.kind, "momentum": self.momentum, "eps": self.eps}


class GradReversal(Layer):
    kind = "grad_reversal"

    def __init__(self, lam: float = 1.0):
        super().__init__()
        self.lam = lam

    def forward(self, x, train=False):
        return grad_reversal_forward(x, self.lam)

    def backward(self, grad):
        return grad_reversal_backward(grad, self.lam)

    def config(self):
        return {"type": self.kind, "lambda": self.lam}


class SoftmaxHead(Layer):
    kind = "softmax_head"

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ConfigError(f"softmax_head expects (C,) input, got {in_shape}")
        return in_shape

    def forward(self, x, train=False):
        self._p = softmax(x, axis=-1)
        return self._p

    def backward(self, grad):
        return softmax_backward(self._p, grad)


LAYER_TYPES = {
    cls.kind: cls
    for cls in (Conv, ReLU, MaxPool, AvgPool, Flatten, FC, LinearHead, BatchNorm, GradReversal, SoftmaxHead)
}

_LAYER_ARGS = {
    "conv": {"out": "out_channels", "kernel": "kernel", "stride": "stride", "pad": "pad"},
    "fc": {"out": "out"},
    "linear_head": {"out": "out"},
    "batchnorm": {"momentum": "momentum", "eps": "eps"},
    "grad_reversal": {"lambda": "lam"},
}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("type", None)
    if kind not in LAYER_TYPES:
        raise ConfigError(f"unknown layer type {kind!r}; known: {sorted(LAYER_TYPES)}")
    names = _LAYER_ARGS.get(kind, {})
    unknown = set(cfg) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys for {kind} layer: {sorted(unknown)}")
    return LAYER_TYPES[kind](**{names[k]: v for k, v in cfg.items()})
