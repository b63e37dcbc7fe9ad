"""Small dense-matrix layer shared by every other module.

All numerics run in float64. Values are validated to be finite on
construction so downstream code never has to re-check for NaN/Inf
contamination.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


class Matrix:
    """Immutable 2-D float64 matrix with row-major storage.

    Accepts any 2-D array-like. The wrapped buffer is copied and marked
    read-only, so a Matrix can be shared freely between threads.
    """

    __slots__ = ("_a",)

    def __init__(self, values) -> None:
        a = np.array(values, dtype=np.float64, copy=True)
        if a.ndim != 2:
            raise ShapeError(f"Matrix requires a 2-D array, got ndim={a.ndim}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ShapeError(f"Matrix requires positive dimensions, got {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("Matrix entries must be finite")
        a = np.ascontiguousarray(a)
        a.flags.writeable = False
        object.__setattr__(self, "_a", a)

    @classmethod
    def from_flat(cls, rows: int, cols: int, data) -> "Matrix":
        flat = np.asarray(data, dtype=np.float64)
        if flat.ndim != 1 or flat.size != rows * cols:
            raise ShapeError(
                f"flat data of length {flat.size} does not fill {rows}x{cols}"
            )
        return cls(flat.reshape(rows, cols))

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the entries (read-only, length rows*cols)."""
        return self._a.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        """Read-only 2-D view of the entries."""
        return self._a

    @property
    def T(self) -> "Matrix":
        return Matrix(self._a.T)

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


def identity(n: int) -> Matrix:
    return Matrix(np.eye(n))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product a @ b. Raises ShapeError when inner dims differ."""
    if a.cols != b.rows:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.rows}x{a.cols} @ {b.rows}x{b.cols}"
        )
    return Matrix(a.array @ b.array)


_REDUCERS = {
    "sum": lambda a: a.sum(axis=1),
    "mean": lambda a: a.mean(axis=1),
    "max_abs": lambda a: np.abs(a).max(axis=1),
}


def rowwise_reduce(a: Matrix, kind: str) -> np.ndarray:
    """Per-row reduction; kind is one of 'sum', 'mean', 'max_abs'."""
    try:
        reducer = _REDUCERS[kind]
    except KeyError:
        raise ValueError(f"unknown reduction kind {kind!r}") from None
    return reducer(a.array)
