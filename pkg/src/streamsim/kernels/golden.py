"""Golden references with matched accumulation order.

Arithmetic here is deliberately independent of :mod:`streamsim.minifloat`:
each FMA is formed exactly with :class:`fractions.Fraction` and rounded once
by ``float()`` (correctly rounded). Operands are read straight from numpy
arrays / CSR lists, not from a scratchpad image.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from ..operands import CsrMatrix


def fma_ref(a: float, b: float, c: float) -> float:
    if math.isnan(a) or math.isnan(b) or math.isnan(c):
        return math.nan
    if math.isinf(a) or math.isinf(b):
        if a == 0 or b == 0:
            return math.nan
        p = math.copysign(math.inf, a) * math.copysign(1.0, b)
        if math.isinf(c) and c != p:
            return math.nan
        return p
    if math.isinf(c):
        return c
    exact = Fraction(a) * Fraction(b) + Fraction(c)
    if exact == 0:
        prod_neg = (math.copysign(1.0, a) < 0) != (math.copysign(1.0, b) < 0)
        both_neg = prod_neg and math.copysign(1.0, c) < 0
        # nonzero terms cancelling exactly give +0 under round-to-nearest
        return -0.0 if both_neg and (a == 0 or b == 0) and c == 0 else 0.0
    try:
        return float(exact)
    except OverflowError:
        return math.inf if exact > 0 else -math.inf


def fma_chain(pairs, init: float = -0.0) -> float:
    acc = init
    for a, b in pairs:
        acc = fma_ref(a, b, acc)
    return acc


def stencil_ref(grid: np.ndarray, offsets, coeffs) -> np.ndarray:
    h = max(max(abs(d) for d in off) for off in offsets)
    nz, ny, nx = grid.shape
    out = grid.copy()
    for z in range(h, nz - h):
        for y in range(h, ny - h):
            for x in range(h, nx - h):
                out[z, y, x] = fma_chain((float(c), float(grid[z + dz, y + dy, x + dx]))
                                         for (dz, dy, dx), c in zip(offsets, coeffs))
    return out


def spmm_ref(A: CsrMatrix, B: np.ndarray) -> np.ndarray:
    C = np.zeros((A.rows, B.shape[1]))
    for i in range(A.rows):
        cols, vals = A.row(i)
        if not cols:
            continue
        for j in range(B.shape[1]):
            C[i, j] = fma_chain((a, float(B[k, j])) for k, a in zip(cols, vals))
    return C


def spmspm_ref(A: np.ndarray, B: np.ndarray, a_mask: np.ndarray, b_mask: np.ndarray):
    """Dense multiply over structural nonzeros (ascending k), then drop exact zeros.

    Returns {(i, j): value}.
    """
    out = {}
    for i in range(A.shape[0]):
        ks_i = np.nonzero(a_mask[i])[0]
        for j in range(B.shape[1]):
            ks = [k for k in ks_i if b_mask[k, j]]
            if not ks:
                continue
            v = fma_chain((float(A[i, k]), float(B[k, j])) for k in ks)
            if v != 0:
                out[(i, j)] = v
    return out


def sparse_dot_ref(a_idx, a_val, b) -> float:
    if len(a_idx) == 0:
        return 0.0
    return fma_chain((float(v), float(b[k])) for k, v in zip(a_idx, a_val))
