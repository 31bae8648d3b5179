"""Dense float64 tensors and convolution shape arithmetic.

Storage is row-major (C order) and 64-bit throughout. The neural layers
work on plain ``numpy.ndarray`` values; :class:`Tensor` is the immutable,
validated carrier used at module boundaries and in checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised for shape/data mismatches and invalid convolution geometry."""


@dataclass(frozen=True)
class Shape2D:
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise ShapeError(f"Shape2D dims must be >= 1, got {self.height}x{self.width}")

    @classmethod
    def parse(cls, text: str) -> "Shape2D":
        """Parse ``"HxW"`` (e.g. ``"128x64"``)."""
        try:
            h, w = text.lower().split("x")
            return cls(int(h), int(w))
        except ValueError as exc:
            raise ShapeError(f"expected HxW, got {text!r}") from exc

    def __str__(self):
        return f"{self.height}x{self.width}"


class Tensor:
    """Immutable dense tensor with an explicit shape.

    Elements are stored as a read-only float64 array in row-major order.
    """

    __slots__ = ("_array",)

    def __init__(self, shape: Sequence[int], data: Iterable[float]):
        shape = tuple(int(d) for d in shape)
        if not shape:
            raise ShapeError("shape must be non-empty")
        if any(d < 1 for d in shape):
            raise ShapeError(f"every dimension must be >= 1, got {shape}")
        flat = np.array(data, dtype=np.float64).ravel()
        expected = math.prod(shape)
        if flat.size != expected:
            raise ShapeError(
                f"data length {flat.size} does not match product of shape {shape} = {expected}"
            )
        arr = flat.reshape(shape)
        arr.flags.writeable = False
        self._array = arr

    @classmethod
    def from_array(cls, array) -> "Tensor":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(arr.shape, arr.ravel())

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls(shape, np.zeros(math.prod(shape)))

    @classmethod
    def ones(cls, shape: Sequence[int]) -> "Tensor":
        return cls(shape, np.ones(math.prod(shape)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view (read-only)."""
        return self._array.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        """Shaped read-only view."""
        return self._array

    def numpy(self) -> np.ndarray:
        """Writable copy."""
        return self._array.copy()

    def __getitem__(self, index):
        value = self._array[index]
        return float(value) if np.ndim(value) == 0 else value

    def __len__(self):
        return self._array.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._array, other._array))

    def __hash__(self):
        return hash((self.shape, self._array.tobytes()))

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, data={self._array.tolist()})"

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return Tensor(shape, self.data)

    def _binary(self, other, op) -> "Tensor":
        o = other._array if isinstance(other, Tensor) else other
        if isinstance(other, Tensor) and other.shape != self.shape:
            raise ShapeError(f"shape mismatch: {self.shape} vs {other.shape}")
        return Tensor.from_array(op(self._array, o))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    def scale(self, factor: float) -> "Tensor":
        return Tensor.from_array(self._array * float(factor))


def new(shape: Sequence[int], data: Iterable[float]) -> Tensor:
    return Tensor(shape, data)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return Tensor.from_array(a.array @ b.array)


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    """Output length along one axis: ``(size - kernel + 2*pad) / stride + 1``.

    Raises :class:`ShapeError` when the kernel does not fit the padded input
    or when the stride does not divide the span exactly.
    """
    if kernel < 1 or stride < 1 or pad < 0:
        raise ShapeError(f"invalid kernel/stride/pad: {kernel}/{stride}/{pad}")
    span = size - kernel + 2 * pad
    if span < 0:
        raise ShapeError(f"kernel {kernel} larger than padded input {size + 2 * pad}")
    if span % stride:
        raise ShapeError(
            f"stride {stride} does not divide (size - kernel + 2*pad) = {span}"
        )
    return span // stride + 1


def conv_output_shape(shape: Shape2D, kernel: int, stride: int, pad: int) -> Shape2D:
    return Shape2D(
        conv_output_size(shape.height, kernel, stride, pad),
        conv_output_size(shape.width, kernel, stride, pad),
    )
