"""Dense 2-D float64 matrices and the small reduction toolkit built on them.

All storage is row-major float64 and immutable after construction. numpy
carries the arithmetic; the wrappers add the shape and finiteness checks
that the spike machinery relies on. Percentiles use sorted linear
interpolation so threshold selection is reproducible down to the bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import EmptyInputError, NonFiniteError, ShapeError


class Matrix:
    """An immutable rows x cols matrix of float64 values."""

    __slots__ = ("_a",)

    def __init__(self, values) -> None:
        a = np.array(values, dtype=np.float64, order="C", copy=True)
        if a.ndim != 2:
            raise ShapeError(f"Matrix needs 2-D data, got ndim={a.ndim}")
        if a.size and not np.all(np.isfinite(a)):
            bad = np.argwhere(~np.isfinite(a))[0]
            raise NonFiniteError(
                f"non-finite entry at ({bad[0]}, {bad[1]}) in Matrix constructor"
            )
        a.setflags(write=False)
        self._a = a

    @classmethod
    def _wrap(cls, a: np.ndarray) -> "Matrix":
        # Internal fast path: takes ownership of a C-contiguous float64 array.
        m = object.__new__(cls)
        arr = np.ascontiguousarray(a, dtype=np.float64)
        arr.setflags(write=False)
        m._a = arr
        return m

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls._wrap(np.zeros((rows, cols)))

    @classmethod
    def from_flat(cls, rows: int, cols: int, flat: Iterable[float]) -> "Matrix":
        a = np.fromiter(flat, dtype=np.float64)
        if a.size != rows * cols:
            raise ShapeError(
                f"flat data has {a.size} entries, expected {rows}x{cols}={rows * cols}"
            )
        return cls(a.reshape(rows, cols))

    @classmethod
    def random_normal(
        cls, rows: int, cols: int, scale: float, rng: np.random.Generator
    ) -> "Matrix":
        return cls(rng.normal(0.0, scale, size=(rows, cols)))

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._a.shape  # type: ignore[return-value]

    @property
    def data(self) -> np.ndarray:
        """Flat row-major read-only view of the entries."""
        return self._a.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        """Read-only 2-D view of the entries."""
        return self._a

    def tolist(self) -> list[list[float]]:
        return self._a.tolist()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return self._a.shape == other._a.shape and bool(np.all(self._a == other._a))

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


@dataclass(frozen=True)
class ActivationStats:
    """Summary of one batch of activation values.

    percentiles maps each requested quantile in [0, 1] to the value at that
    rank of the signed sample; abs_percentiles does the same for |values|,
    which is what threshold selection wants.
    """

    count: int
    mean: float
    std: float
    minimum: float
    maximum: float
    percentiles: Mapping[float, float]
    abs_percentiles: Mapping[float, float]


def percentile(sorted_values: np.ndarray, q: float) -> float:
    """Sorted linear interpolation percentile, q in [0, 1]."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile must lie in [0, 1], got {q}")
    n = sorted_values.size
    if n == 0:
        raise EmptyInputError("percentile of an empty sample")
    pos = q * (n - 1)
    i = int(np.floor(pos))
    if i >= n - 1:
        return float(sorted_values[-1])
    frac = pos - i
    return float(sorted_values[i] * (1.0 - frac) + sorted_values[i + 1] * frac)


def stats(x: Matrix, quantiles: Iterable[float] = ()) -> ActivationStats:
    """Summary statistics of all entries of x at the requested quantiles."""
    a = x.data
    if a.size == 0:
        raise EmptyInputError("stats on an empty Matrix")
    qs = tuple(quantiles)
    signed = np.sort(a)
    absolute = np.sort(np.abs(a))
    return ActivationStats(
        count=int(a.size),
        mean=float(np.mean(a)),
        std=float(np.std(a)),
        minimum=float(signed[0]),
        maximum=float(signed[-1]),
        percentiles={q: percentile(signed, q) for q in qs},
        abs_percentiles={q: percentile(absolute, q) for q in qs},
    )


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ShapeError(
            f"matmul shape mismatch: {a.rows}x{a.cols} @ {b.rows}x{b.cols}"
        )
    return Matrix._wrap(a.array @ b.array)


def elementwise(f: Callable[[np.ndarray], np.ndarray], x: Matrix) -> Matrix:
    out = np.asarray(f(x.array), dtype=np.float64)
    if out.shape != x.array.shape:
        raise ShapeError(
            f"elementwise function changed shape {x.array.shape} -> {out.shape}"
        )
    return Matrix._wrap(out)


def rowsum(x: Matrix) -> Matrix:
    return Matrix._wrap(x.array.sum(axis=1, keepdims=True))


def rowmax(x: Matrix) -> Matrix:
    if x.cols == 0:
        raise EmptyInputError("rowmax over zero columns")
    return Matrix._wrap(x.array.max(axis=1, keepdims=True))


def hadamard(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return Matrix._wrap(a.array * b.array)
