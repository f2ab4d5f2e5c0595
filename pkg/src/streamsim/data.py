"""Operand ingestion and generation: Matrix Market files, CSR conversion,
random sparse matrices and initialized grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .operands import INDEX_WIDTHS, CsrError, CsrMatrix, DenseTensor

__all__ = [
    "MatrixMarketError", "IndexWidthError", "CooMatrix", "parse_matrix_market",
    "read_matrix_market", "write_matrix_market", "coo_to_csr", "csr_to_coo",
    "gen_random_sparse", "gen_grid", "gen_poisson2d", "gen_banded", "gen_random_rows",
]

_FIELDS = ("real", "integer", "pattern")
_SYMMETRY = ("general", "symmetric")


class MatrixMarketError(ValueError):
    pass


class IndexWidthError(CsrError):
    pass


@dataclass
class CooMatrix:
    rows: int
    cols: int
    entries: list[tuple[int, int, float]] = field(default_factory=list)
    symmetric: bool = False  # as declared in the source header; entries are already expanded

    def canonical(self) -> CooMatrix:
        """Sorted by (row, col) with duplicates summed."""
        acc: dict[tuple[int, int], float] = {}
        for r, c, v in self.entries:
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise MatrixMarketError(f"entry ({r}, {c}) outside {self.rows}x{self.cols}")
            acc[(r, c)] = acc[(r, c)] + v if (r, c) in acc else v
        return CooMatrix(self.rows, self.cols, [(r, c, acc[(r, c)]) for r, c in sorted(acc)],
                         self.symmetric)


def parse_matrix_market(text: str) -> CooMatrix:
    lines = text.splitlines()
    if not lines:
        raise MatrixMarketError("empty input")
    head = lines[0].split()
    if len(head) != 5 or head[0].lower() != "%%matrixmarket" or head[1].lower() != "matrix":
        raise MatrixMarketError("line 1: expected '%%MatrixMarket matrix coordinate <field> <symmetry>'")
    fmt, fld, sym = (h.lower() for h in head[2:])
    if fmt != "coordinate":
        raise MatrixMarketError(f"line 1: unsupported format '{fmt}' (only coordinate)")
    if fld not in _FIELDS:
        raise MatrixMarketError(f"line 1: unsupported field '{fld}' (expected real, integer or pattern)")
    if sym not in _SYMMETRY:
        raise MatrixMarketError(f"line 1: unsupported symmetry '{sym}' (expected general or symmetric)")

    body = ((n, ln.strip()) for n, ln in enumerate(lines[1:], 2))
    body = [(n, ln) for n, ln in body if ln and not ln.startswith("%")]
    if not body:
        raise MatrixMarketError("missing size line")
    n, size = body[0]
    try:
        rows, cols, nnz = (int(t) for t in size.split())
    except ValueError:
        raise MatrixMarketError(f"line {n}: bad size line '{size}'") from None
    if min(rows, cols, nnz) < 0:
        raise MatrixMarketError(f"line {n}: negative size")
    data = body[1:]
    if len(data) != nnz:
        where = data[nnz][0] if len(data) > nnz else (data[-1][0] if data else n)
        raise MatrixMarketError(f"line {where}: header declares {nnz} entries, found {len(data)}")

    want = 2 if fld == "pattern" else 3
    entries = []
    for n, ln in data:
        tok = ln.split()
        if len(tok) != want:
            raise MatrixMarketError(f"line {n}: expected {want} fields, got {len(tok)}")
        try:
            r, c = int(tok[0]) - 1, int(tok[1]) - 1
            v = 1.0 if fld == "pattern" else float(int(tok[2]) if fld == "integer" else float(tok[2]))
        except ValueError:
            raise MatrixMarketError(f"line {n}: cannot parse entry '{ln}'") from None
        if not (0 <= r < rows and 0 <= c < cols):
            raise MatrixMarketError(f"line {n}: index ({r + 1}, {c + 1}) outside {rows}x{cols}")
        if sym == "symmetric" and c > r:
            raise MatrixMarketError(f"line {n}: symmetric files store the lower triangle only")
        entries.append((r, c, v))
        if sym == "symmetric" and r != c:
            entries.append((c, r, v))
    return CooMatrix(rows, cols, entries, sym == "symmetric")


def read_matrix_market(path: str | Path) -> CooMatrix:
    return parse_matrix_market(Path(path).read_text())


def write_matrix_market(coo: CooMatrix) -> str:
    """Re-emit as ``coordinate real general`` (entries written as stored)."""
    out = ["%%MatrixMarket matrix coordinate real general",
           f"{coo.rows} {coo.cols} {len(coo.entries)}"]
    out += [f"{r + 1} {c + 1} {v!r}" for r, c, v in coo.entries]
    return "\n".join(out) + "\n"


def _width_for(n: int) -> int:
    return next((w for w in INDEX_WIDTHS if n <= (1 << w)), 64)


def coo_to_csr(coo: CooMatrix, index_width: int = 32) -> CsrMatrix:
    if index_width not in INDEX_WIDTHS:
        raise CsrError(f"index width must be 8, 16 or 32, got {index_width}")
    canon = coo.canonical()
    limit = (1 << index_width) - 1
    if canon.entries:
        widest = max(c for _, c, _ in canon.entries)
        if widest > limit:
            need = _width_for(widest + 1)
            raise IndexWidthError(
                f"column index {widest} does not fit {index_width}-bit indices "
                f"(max {limit}); use index_width={need} or wider")
    row_ptr = [0] * (coo.rows + 1)
    for r, _, _ in canon.entries:
        row_ptr[r + 1] += 1
    for i in range(coo.rows):
        row_ptr[i + 1] += row_ptr[i]
    return CsrMatrix(coo.rows, coo.cols, row_ptr, [c for _, c, _ in canon.entries],
                     [v for _, _, v in canon.entries], index_width)


def csr_to_coo(csr: CsrMatrix) -> CooMatrix:
    entries = []
    for i in range(csr.rows):
        for k in range(csr.row_ptr[i], csr.row_ptr[i + 1]):
            entries.append((i, csr.col_idx[k], csr.values[k]))
    return CooMatrix(csr.rows, csr.cols, entries)


def _from_mask(mask: np.ndarray, values: np.ndarray, index_width: int | None) -> CsrMatrix:
    rows, cols = mask.shape
    r, c = np.nonzero(mask)
    row_ptr = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=rows), out=row_ptr[1:])
    width = index_width or _width_for(cols)
    csr = CsrMatrix(rows, cols, row_ptr.tolist(), c.tolist(), values[r, c].tolist(), width)
    return csr


def gen_random_sparse(rows: int, cols: int, density: float, seed: int = 0,
                      index_width: int | None = None) -> CsrMatrix:
    """Every entry present independently with probability ``density``;
    values uniform in (-1, 1). The pattern does not depend on the value format."""
    if not 0 < density <= 1:
        raise ValueError(f"density must be in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    mask = rng.random((rows, cols)) < density
    vals = rng.uniform(-1.0, 1.0, (rows, cols))
    vals[vals == -1.0] = 0.5  # keep the open interval
    return _from_mask(mask, vals, index_width)


def gen_random_rows(rows: int, cols: int, per_row: int, seed: int = 0,
                    index_width: int | None = None) -> CsrMatrix:
    """Exactly ``per_row`` random columns per row (uniform without replacement)."""
    rng = np.random.default_rng(seed)
    mask = np.zeros((rows, cols), dtype=bool)
    for i in range(rows):
        mask[i, rng.choice(cols, size=min(per_row, cols), replace=False)] = True
    vals = rng.uniform(-1.0, 1.0, (rows, cols))
    return _from_mask(mask, vals, index_width)


def gen_poisson2d(n: int, index_width: int | None = None) -> CsrMatrix:
    """5-point Laplacian on an n x n grid (n^2 rows)."""
    N = n * n
    mask = np.zeros((N, N), dtype=bool)
    vals = np.zeros((N, N))
    for y in range(n):
        for x in range(n):
            i = y * n + x
            mask[i, i], vals[i, i] = True, 4.0
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                yy, xx = y + dy, x + dx
                if 0 <= yy < n and 0 <= xx < n:
                    j = yy * n + xx
                    mask[i, j], vals[i, j] = True, -1.0
    return _from_mask(mask, vals, index_width)


def gen_banded(n: int, half_bandwidth: int, seed: int = 0, index_width: int | None = None) -> CsrMatrix:
    rng = np.random.default_rng(seed)
    i, j = np.indices((n, n))
    mask = np.abs(i - j) <= half_bandwidth
    return _from_mask(mask, rng.uniform(-1.0, 1.0, (n, n)), index_width)


def gen_grid(dims: Sequence[int], mode: str = "random", value: float = 0.0,
             seed: int = 0) -> DenseTensor:
    """``mode`` is 'constant' (all ``value``), 'ramp' (0, 1, 2, ... row-major)
    or 'random' (uniform in [-1, 1) from ``seed``)."""
    dims = tuple(int(d) for d in dims)
    if not dims or any(d <= 0 for d in dims):
        raise ValueError(f"grid dims must be positive, got {dims}")
    if mode == "constant":
        data = np.full(dims, float(value))
    elif mode == "ramp":
        data = np.arange(int(np.prod(dims)), dtype=np.float64).reshape(dims)
    elif mode == "random":
        data = np.random.default_rng(seed).uniform(-1.0, 1.0, dims)
    else:
        raise ValueError(f"unknown grid mode {mode!r}")
    return DenseTensor(data)
