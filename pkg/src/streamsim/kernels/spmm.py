"""Sparse (CSR) x dense matrix multiply.

Output is tiled by (column block, row block). A column block of B is kept
in the scratchpad transposed and packed: for each group of ``lanes``
columns, ``K`` consecutive 64-bit words, word ``k`` holding B[k, group].
Each C word is then a sparse-dense dot product of one A row with one such
group array, which is exactly the Fig. 5 microkernel with SIMD lanes.

SU variant, per dot: re-arm the B gather (indirect over A's column
indices), the A value stream and the C write stream, then one hardware
loop of ``nnz(row)`` FMAs. Baseline, per element: load index, address
arithmetic, load value, load B, FMA (plus the load-use bubbles).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..machine import (INT_OP, LOOP_BEGIN, LOOP_END, STALL, SU_CONFIG, ClusterConfig,
                       DmaKind, DmaRequest, IssueTrace, KernelReport, Slot, SlotKind)
from ..minifloat import FP64, FloatFormat, _fma_raw, decode, encode, fma64
from ..operands import CsrMatrix, DenseTensor
from ..streams import IndirectConfig, Scratchpad, indirect_addresses
from .common import (OperandError, PlanningError, SpmArena, TileRun, Variant, odd_words,
                     round_robin, slot_load, slot_store, time_tiles)

__all__ = ["spmm", "plan_spmm", "SpmmPlan"]


@dataclass(frozen=True)
class SpmmPlan:
    col_block: int                 # columns of B/C per block (multiple of lanes)
    row_tiles: list[tuple[int, int]]
    b_pitch: int                   # words per packed group array


def _a_tile_bytes(A: CsrMatrix, r0: int, r1: int, fmt: FloatFormat) -> tuple[int, int, int]:
    nnz = A.row_ptr[r1] - A.row_ptr[r0]
    return (r1 - r0 + 1) * 4, -(-nnz * A.index_width // 8), -(-nnz * fmt.width // 8)


def plan_spmm(A: CsrMatrix, n_cols: int, fmt: FloatFormat, cfg: ClusterConfig,
              tile_rows: int | None = None, col_block: int | None = None) -> SpmmPlan:
    lanes = fmt.lanes
    K = A.cols
    pitch = odd_words(K)
    half = cfg.spm_bytes // 2
    if col_block is None:
        groups = max(1, min(n_cols // lanes, half // (2 * pitch * 8)))
        col_block = groups * lanes
    if col_block % lanes or col_block <= 0:
        raise PlanningError(f"col_block must be a positive multiple of {lanes} lanes")
    b_bytes = (col_block // lanes) * pitch * 8
    budget = cfg.spm_bytes - 2 * b_bytes
    if budget <= 0:
        raise PlanningError(f"a {col_block}-column block of B ({b_bytes} bytes, double "
                            f"buffered) does not fit in {cfg.spm_bytes} bytes of SPM")
    c_row = col_block // lanes * 8

    def tile_bytes(r0: int, r1: int) -> int:
        return sum(-(-b // 8) * 8 for b in _a_tile_bytes(A, r0, r1, fmt)) + (r1 - r0) * c_row

    def fits(r0: int, r1: int) -> bool:
        return 2 * tile_bytes(r0, r1) <= budget

    if tile_rows is not None:
        tiles = [(r, min(r + tile_rows, A.rows)) for r in range(0, A.rows, tile_rows)]
        for r0, r1 in tiles:
            if not fits(r0, r1):
                raise PlanningError(f"a {tile_rows}-row tile at row {r0} does not fit in SPM "
                                    f"beside the B block (needs {2 * tile_bytes(r0, r1)} of "
                                    f"{budget} bytes)")
        return SpmmPlan(col_block, tiles, pitch)
    # largest greedy tiles, then rebalanced to equal row counts where they still fit
    greedy, r0 = 0, 0
    while r0 < A.rows:
        if not fits(r0, r0 + 1):
            raise PlanningError(f"row {r0} of A with its C row does not fit beside the B block")
        r1 = r0 + 1
        while r1 < A.rows and fits(r0, r1 + 1):
            r1 += 1
        greedy += 1
        r0 = r1
    for n in range(greedy, A.rows + 1):
        size = -(-A.rows // n)
        tiles = [(r, min(r + size, A.rows)) for r in range(0, A.rows, size)]
        if all(fits(a, b) for a, b in tiles):
            break
    return SpmmPlan(col_block, tiles, pitch)


def spmm(A: CsrMatrix, B: DenseTensor, variant: Variant | str = Variant.SU,
         cfg: ClusterConfig | None = None, fmt: FloatFormat | None = None,
         tile_rows: int | None = None, col_block: int | None = None,
         operand_id: str = "") -> tuple[DenseTensor, KernelReport]:
    cfg = cfg or ClusterConfig()
    variant = Variant.parse(variant)
    fmt = fmt or B.fmt
    if len(B.dims) != 2 or A.cols != B.dims[0]:
        raise OperandError(f"dimension mismatch: A is {A.rows}x{A.cols}, B is {B.dims}")
    A.validate()
    N = B.dims[1]
    lanes = fmt.lanes
    if N % lanes:
        raise OperandError(f"{fmt.name} packs {lanes} lanes; B.cols={N} is not a multiple")
    plan = plan_spmm(A, N, fmt, cfg, tile_rows, col_block)
    K = A.cols
    # raw encodings of the operands in the kernel format
    if fmt == FP64:
        a_raw = None
        b_raw = None
    else:
        a_raw = [encode(fmt, float(v)).raw for v in A.values]
        b_raw = np.vectorize(lambda v: encode(fmt, float(v)).raw, otypes=[np.int64])(B.data)
    C = np.zeros((A.rows, N))
    spm = Scratchpad(cfg.spm_bytes)
    blocks: list[list[TileRun]] = []
    b_loads: list[int] = []
    t = 0
    for c0 in range(0, N, plan.col_block):
        c1 = min(c0 + plan.col_block, N)
        groups = (c1 - c0) // lanes
        arena = SpmArena(cfg.spm_bytes)
        b_base = arena.alloc(2 * (plan.col_block // lanes) * plan.b_pitch * 8, "B column blocks")
        b_base += (len(blocks) % 2) * (plan.col_block // lanes) * plan.b_pitch * 8
        bufs = arena.top
        _stage_b(spm, B.data, b_raw, fmt, c0, groups, K, plan.b_pitch, b_base)
        b_loads.append(groups)
        block = []
        for r0, r1 in plan.row_tiles:
            arena.top = bufs + (t % 2) * (cfg.spm_bytes - bufs) // 2
            lay = _stage_a(spm, arena, A, a_raw, fmt, r0, r1, groups)
            trace = IssueTrace.empty(cfg.n_workers)
            for w, mine in enumerate(round_robin(r1 - r0, cfg.n_workers)):
                slots = trace.workers[w]
                for li in mine:
                    _row(slots, spm, A, fmt, r0 + li, r0, lay, b_base, plan.b_pitch, groups,
                         variant, cfg)
            for i in range(r0, r1):
                for g in range(groups):
                    word = spm.read_uint(lay.c + (g * (r1 - r0) + i - r0) * 8, 8)
                    C[i, c0 + g * lanes:c0 + (g + 1) * lanes] = _unpack(word, fmt)
            dma_in = [DmaRequest.linear(s) for s in _a_tile_bytes(A, r0, r1, fmt) if s]
            # B and C live in HBM in the same group-major packed layout as in SPM
            dma_out = [DmaRequest(DmaKind.D2, groups, (r1 - r0) * 8, "SPM", "HBM")]
            block.append(TileRun(trace, dma_in, dma_out))
            t += 1
        blocks.append(block)
    _schedule_b_loads(blocks, b_loads, K)
    tiles = [tile for block in blocks for tile in block]
    report = time_tiles("spmm", variant, fmt, cfg, tiles,
                        operand_id or f"{A.rows}x{A.cols}nnz{A.nnz}xN{N}")
    return DenseTensor(C, fmt), report


def _schedule_b_loads(blocks: list[list[TileRun]], b_loads: list[int], K: int) -> None:
    """Attach each column block's B transfer to tile DMA phases.

    The first block is the prologue. Block ``b+1`` goes to the spare B
    buffer while block ``b`` computes: its group arrays are dealt out over
    the transfers that overlap block ``b``'s tiles (tiles 1.. of block ``b``
    and tile 0 of block ``b+1``).
    """
    blocks[0][0].dma_in.append(DmaRequest(DmaKind.D2, b_loads[0], K * 8))
    for b in range(1, len(blocks)):
        slots = blocks[b - 1][1:] + [blocks[b][0]]
        groups = b_loads[b]
        share, extra = divmod(groups, len(slots))
        for n, tile in enumerate(slots):
            rows = share + (1 if n < extra else 0)
            if rows:
                tile.dma_in.append(DmaRequest(DmaKind.D2, rows, K * 8))


@dataclass
class _Layout:
    row_ptr: int
    idx: int
    val: int
    c: int
    rows: int


def _stage_b(spm, data, raw, fmt, c0, groups, K, pitch, base):
    lanes = fmt.lanes
    for g in range(groups):
        cols = slice(c0 + g * lanes, c0 + (g + 1) * lanes)
        if fmt == FP64:
            spm.write_f64_array(base + g * pitch * 8, data[:, cols.start].tolist())
        else:
            for k in range(K):
                word = 0
                for lane, r in enumerate(raw[k, cols]):
                    word |= int(r) << (lane * fmt.width)
                spm.write_uint(base + (g * pitch + k) * 8, 8, word)


def _stage_a(spm, arena, A, a_raw, fmt, r0, r1, groups) -> _Layout:
    lo, hi = A.row_ptr[r0], A.row_ptr[r1]
    rp_b, idx_b, val_b = _a_tile_bytes(A, r0, r1, fmt)
    lay = _Layout(arena.alloc(rp_b, "A row pointers"), arena.alloc(idx_b, "A column indices"),
                  arena.alloc(val_b, "A values"),
                  arena.alloc((r1 - r0) * groups * 8, "C tile"), r1 - r0)
    spm.write_index_array(lay.row_ptr, 32, [p - lo for p in A.row_ptr[r0:r1 + 1]])
    spm.write_index_array(lay.idx, A.index_width, A.col_idx[lo:hi])
    if fmt == FP64:
        spm.write_f64_array(lay.val, A.values[lo:hi])
    else:
        eb = fmt.width // 8
        for n, r in enumerate(a_raw[lo:hi]):
            spm.write_uint(lay.val + n * eb, eb, r)
    return lay


def _unpack(word: int, fmt: FloatFormat) -> list[float]:
    if fmt == FP64:
        return [decode(FP64, word)]
    mask = (1 << fmt.width) - 1
    return [decode(fmt, (word >> (l * fmt.width)) & mask) for l in range(fmt.lanes)]


def _dot(fmt: FloatFormat, a_vals: list[int], b_words: list[int]) -> int:
    """FMA chain over SIMD lanes; the accumulator starts at -0 so the first
    step is an exact multiply. Returns the packed result word."""
    if fmt == FP64:
        acc = -0.0
        for a, b in zip(a_vals, b_words):
            acc = fma64(decode(FP64, a), decode(FP64, b), acc)
        return int(np.float64(acc).view(np.uint64))
    w, mask = fmt.width, (1 << fmt.width) - 1
    out = 0
    for lane in range(fmt.lanes):
        acc = fmt.sign_bit
        for a, b in zip(a_vals, b_words):
            acc = _fma_raw(fmt, a, (b >> (lane * w)) & mask, acc)
        out |= acc << (lane * w)
    return out


def _row(slots, spm, A, fmt, i, r0, lay, b_base, pitch, groups, variant, cfg):
    eb = fmt.width // 8
    iw = A.index_width
    li = i - r0
    rp = lay.row_ptr + li * 4
    slots += (slot_load(rp), slot_load(rp + 4))
    slots += (STALL,) * cfg.load_use_stall
    slots.append(INT_OP)
    lo = spm.read_uint(rp, 4)
    hi = spm.read_uint(rp + 4, 4)
    r = hi - lo
    idx_base = lay.idx + lo * iw // 8
    val_addrs = [lay.val + (lo + n) * eb for n in range(r)]
    a_vals = [spm.read_uint(a, eb) for a in val_addrs]
    use = (STALL,) * cfg.load_use_stall
    for g in range(groups):
        dst = lay.c + (g * lay.rows + li) * 8
        if r == 0:
            spm.write_uint(dst, 8, 0)
            slots += (slot_store(dst), INT_OP, INT_OP)
            continue
        col_base = b_base + g * pitch * 8
        if variant is Variant.SU:
            addrs = indirect_addresses(IndirectConfig(idx_base, iw, r, col_base, 8), spm)
            slots += (SU_CONFIG, SU_CONFIG, SU_CONFIG, INT_OP, LOOP_BEGIN)
            per_word = 64 // iw
            for n, a in enumerate(addrs):
                touched = (a, val_addrs[n])
                if (lo + n) % per_word == 0 or n == 0:
                    touched += (lay.idx + (lo + n) * iw // 8 // 8 * 8,)
                if n == r - 1:
                    touched += (dst,)
                slots.append(Slot(SlotKind.FPU_FMA, 2 * fmt.lanes, 0, touched))
            slots += (LOOP_END, INT_OP, INT_OP)
        else:
            slots += (INT_OP,) * 4
            addrs = []
            fma = Slot(SlotKind.FPU_FMA, 2 * fmt.lanes)
            for n in range(r):
                ia = idx_base + n * iw // 8
                k = spm.read_uint(ia, iw // 8)
                a = col_base + k * 8
                addrs.append(a)
                slots.append(slot_load(ia))
                slots += use
                slots.append(INT_OP)
                slots.append(slot_load(val_addrs[n]))
                slots.append(slot_load(a))
                slots += use
                slots.append(fma)
            slots += (STALL,) * cfg.fpu_drain_stall
            slots += (slot_store(dst), INT_OP, INT_OP)
        spm.write_uint(dst, 8, _dot(fmt, a_vals, [spm.read_uint(a, 8) for a in addrs]))
