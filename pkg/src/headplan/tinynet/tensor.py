"""Rank-4 double-precision tensors, immutable once constructed."""

from __future__ import annotations

import numpy as np


class Tensor:
    """A (batch, channels, height, width) array of finite float64 values.

    The backing array is copied on construction and write-locked, so a
    Tensor can be shared between threads and reused across operations
    without defensive copies.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim != 4:
            raise ValueError(f"tensor must be rank 4, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("tensor values must be finite")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64))

    @classmethod
    def from_rng(cls, rng: np.random.Generator, shape, low=-1.0, high=1.0) -> "Tensor":
        return cls(rng.uniform(low, high, size=shape))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self._data.shape

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the backing array."""
        return self._data

    def allclose(self, other: "Tensor", rtol=1e-10, atol=1e-12) -> bool:
        return self.shape == other.shape and np.allclose(
            self._data, other.data, rtol=rtol, atol=atol)

    def __eq__(self, other):
        return isinstance(other, Tensor) and self.shape == other.shape and \
            bool(np.array_equal(self._data, other.data))

    def __repr__(self):
        return f"Tensor(shape={self.shape})"
