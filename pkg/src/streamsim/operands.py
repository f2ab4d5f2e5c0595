"""Sparse and dense kernel operands."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .minifloat import FP64, FloatFormat

INDEX_WIDTHS = (8, 16, 32)


class CsrError(ValueError):
    pass


@dataclass
class CsrMatrix:
    """CSR matrix. Values are kept as FP64 numbers already representable in
    ``fmt``; narrower kernels encode them on demand."""

    rows: int
    cols: int
    row_ptr: list[int]
    col_idx: list[int]
    values: list[float]
    index_width: int = 32
    fmt: FloatFormat = FP64

    @property
    def nnz(self) -> int:
        return len(self.col_idx)

    def row(self, i: int) -> tuple[list[int], list[float]]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def row_lengths(self) -> list[int]:
        return [self.row_ptr[i + 1] - self.row_ptr[i] for i in range(self.rows)]

    def validate(self) -> None:
        if self.rows < 0 or self.cols < 0:
            raise CsrError("negative dimensions")
        if self.index_width not in INDEX_WIDTHS:
            raise CsrError(f"index width must be 8, 16 or 32, got {self.index_width}")
        rp = self.row_ptr
        if len(rp) != self.rows + 1 or rp[0] != 0 or rp[-1] != self.nnz:
            raise CsrError("row_ptr must have rows+1 entries from 0 to nnz")
        if len(self.values) != self.nnz:
            raise CsrError("values and col_idx differ in length")
        limit = 1 << self.index_width
        for i in range(self.rows):
            if rp[i + 1] < rp[i]:
                raise CsrError(f"row_ptr decreases at row {i}")
            prev = -1
            for k in range(rp[i], rp[i + 1]):
                c = self.col_idx[k]
                if c <= prev:
                    raise CsrError(f"row {i}: column indices not strictly increasing at entry {k}")
                if c >= self.cols or c >= limit:
                    raise CsrError(f"row {i}: column {c} out of range")
                prev = c

    def transpose(self) -> CsrMatrix:
        """CSR of the transpose (i.e. the CSC view of this matrix)."""
        counts = [0] * (self.cols + 1)
        for c in self.col_idx:
            counts[c + 1] += 1
        for j in range(self.cols):
            counts[j + 1] += counts[j]
        nxt = counts[:-1].copy()
        idx = [0] * self.nnz
        vals = [0.0] * self.nnz
        for i in range(self.rows):
            for k in range(self.row_ptr[i], self.row_ptr[i + 1]):
                c = self.col_idx[k]
                p = nxt[c]
                idx[p] = i
                vals[p] = self.values[k]
                nxt[c] += 1
        width = next(w for w in INDEX_WIDTHS if self.rows <= (1 << w)) if self.rows else 8
        return CsrMatrix(self.cols, self.rows, counts, idx, vals, max(width, self.index_width), self.fmt)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        for i in range(self.rows):
            for k in range(self.row_ptr[i], self.row_ptr[i + 1]):
                out[i, self.col_idx[k]] = self.values[k]
        return out

    def same_bits(self, other: CsrMatrix) -> bool:
        return (self.rows, self.cols, self.row_ptr, self.col_idx) == \
            (other.rows, other.cols, other.row_ptr, other.col_idx) and \
            np.array_equal(np.asarray(self.values, dtype=np.float64).view(np.uint64),
                           np.asarray(other.values, dtype=np.float64).view(np.uint64))

    @classmethod
    def identity(cls, n: int, index_width: int = 32) -> CsrMatrix:
        return cls(n, n, list(range(n + 1)), list(range(n)), [1.0] * n, index_width)


@dataclass
class DenseTensor:
    """Row-major tensor of 1 to 3 dims; values are FP64 numbers representable in ``fmt``."""

    data: np.ndarray
    fmt: FloatFormat = FP64
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if not 1 <= self.data.ndim <= 3:
            raise ValueError(f"dense tensors have 1 to 3 dims, got {self.data.ndim}")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    def bits(self) -> np.ndarray:
        return self.data.view(np.uint64)

    def same_bits(self, other: DenseTensor) -> bool:
        return self.dims == other.dims and np.array_equal(self.bits(), other.bits())


def first_difference(a: np.ndarray, b: np.ndarray) -> tuple[int, ...] | None:
    """Index of the first element whose FP64 bits differ, or None."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return ()
    diff = np.nonzero(a.view(np.uint64) != b.view(np.uint64))
    if len(diff[0]) == 0:
        return None
    return tuple(int(d[0]) for d in diff)
