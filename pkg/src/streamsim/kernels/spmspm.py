"""Sparse x sparse matrix multiply (inner-product formulation, FP64).

Every output C[i, j] is a sparse-sparse dot product of row i of A with
column j of B. B is transposed to CSC outside the timed region and stays
resident in the scratchpad together with the list of its non-empty
columns; row tiles of A and C are double buffered.

SU variant: two index streams are intersected in hardware, one comparison
per cycle inside a hardware loop; a matching pair drives the fused FMA in
the same cycle and the third SU writes C's column index. Baseline: an
explicit two-pointer loop (compare/branch, pointer bumps, next-index load).
"""

from __future__ import annotations

from dataclasses import dataclass

from ..machine import (INT_OP, LOOP_BEGIN, LOOP_END, STALL, SU_CONFIG, ClusterConfig,
                       DmaRequest, IssueTrace, KernelReport, Slot, SlotKind)
from ..minifloat import FP64, fma64
from ..operands import CsrMatrix
from ..streams import IndirectConfig, MergeMode, Scratchpad, merge_indices, read_indices
from .common import (OperandError, PlanningError, SpmArena, TileRun, Variant,
                     round_robin, slot_load, slot_store, time_tiles)

__all__ = ["spmspm", "plan_spmspm"]

COMPARE = Slot(SlotKind.COMPARISON, 0, 1)


def _width(n: int) -> int:
    return 8 if n <= 256 else 16 if n <= 1 << 16 else 32


def _nbytes(count: int, width: int) -> int:
    return -(-count * width // 8)


@dataclass(frozen=True)
class SpmspmPlan:
    row_tiles: list[tuple[int, int]]
    out_width: int


def plan_spmspm(A: CsrMatrix, Bt: CsrMatrix, nonempty: int, cfg: ClusterConfig,
                tile_rows: int | None = None) -> SpmspmPlan:
    out_width = _width(Bt.rows)
    resident = ((Bt.rows + 1) * 4 + _nbytes(Bt.nnz, Bt.index_width) + Bt.nnz * 8
                + nonempty * 4 + 4 * 8)
    budget = cfg.spm_bytes - resident
    if budget <= 0:
        raise PlanningError(f"B in CSC form needs {resident} bytes; SPM holds {cfg.spm_bytes}")

    def tile_bytes(r0: int, r1: int) -> int:
        nnz = A.row_ptr[r1] - A.row_ptr[r0]
        bound = sum(nonempty for i in range(r0, r1) if A.row_ptr[i + 1] > A.row_ptr[i])
        parts = ((r1 - r0 + 1) * 4, _nbytes(nnz, A.index_width), nnz * 8,
                 bound * 8, _nbytes(bound, out_width), (r1 - r0) * 4)
        return sum(-(-p // 8) * 8 for p in parts)

    def fits(r0: int, r1: int) -> bool:
        return 2 * tile_bytes(r0, r1) <= budget

    if tile_rows is not None:
        tiles = [(r, min(r + tile_rows, A.rows)) for r in range(0, A.rows, tile_rows)]
        if not all(fits(a, b) for a, b in tiles):
            raise PlanningError(f"{tile_rows}-row tiles of A and C do not fit beside B")
        return SpmspmPlan(tiles, out_width)
    greedy, r0 = 0, 0
    while r0 < A.rows:
        if not fits(r0, r0 + 1):
            raise PlanningError(f"row {r0} of A with its output bound does not fit beside B")
        r1 = r0 + 1
        while r1 < A.rows and fits(r0, r1 + 1):
            r1 += 1
        greedy += 1
        r0 = r1
    tiles = [(0, 0)]
    for n in range(max(greedy, 1), A.rows + 1):
        size = -(-A.rows // n)
        tiles = [(r, min(r + size, A.rows)) for r in range(0, A.rows, size)]
        if all(fits(a, b) for a, b in tiles):
            break
    return SpmspmPlan(tiles, out_width)


@dataclass
class _BLayout:
    col_ptr: int
    idx: int
    val: int
    cols: list[int]       # non-empty columns, in order
    width: int


def spmspm(A: CsrMatrix, B: CsrMatrix, variant: Variant | str = Variant.SU,
           cfg: ClusterConfig | None = None, tile_rows: int | None = None,
           operand_id: str = "") -> tuple[CsrMatrix, KernelReport]:
    cfg = cfg or ClusterConfig()
    variant = Variant.parse(variant)
    if A.cols != B.rows:
        raise OperandError(f"dimension mismatch: A is {A.rows}x{A.cols}, B is {B.rows}x{B.cols}")
    A.validate()
    B.validate()
    Bt = B.transpose()  # untimed CSC build
    nonempty = [j for j in range(Bt.rows) if Bt.row_ptr[j + 1] > Bt.row_ptr[j]]
    plan = plan_spmspm(A, Bt, len(nonempty), cfg, tile_rows)

    spm = Scratchpad(cfg.spm_bytes)
    arena = SpmArena(cfg.spm_bytes)
    bl = _BLayout(arena.alloc((Bt.rows + 1) * 4, "B column pointers"),
                  arena.alloc(_nbytes(Bt.nnz, Bt.index_width), "B row indices"),
                  arena.alloc(Bt.nnz * 8, "B values"), nonempty, Bt.index_width)
    arena.alloc(len(nonempty) * 4, "non-empty column list")
    spm.write_index_array(bl.col_ptr, 32, Bt.row_ptr)
    spm.write_index_array(bl.idx, Bt.index_width, Bt.col_idx)
    spm.write_f64_array(bl.val, Bt.values)
    b_dma = [DmaRequest.linear(n) for n in
             ((Bt.rows + 1) * 4, _nbytes(Bt.nnz, Bt.index_width), Bt.nnz * 8, len(nonempty) * 4)
             if n]
    bufs = -(-arena.top // 8) * 8
    half = (cfg.spm_bytes - bufs) // 2

    row_ptr, col_idx, values = [0], [], []
    tiles = []
    for t, (r0, r1) in enumerate(plan.row_tiles):
        arena.top = bufs + (t % 2) * half
        lo, hi = A.row_ptr[r0], A.row_ptr[r1]
        a_rp = arena.alloc((r1 - r0 + 1) * 4, "A row pointers")
        a_idx = arena.alloc(_nbytes(hi - lo, A.index_width), "A column indices")
        a_val = arena.alloc((hi - lo) * 8, "A values")
        spm.write_index_array(a_rp, 32, [p - lo for p in A.row_ptr[r0:r1 + 1]])
        spm.write_index_array(a_idx, A.index_width, A.col_idx[lo:hi])
        spm.write_f64_array(a_val, A.values[lo:hi])
        bound = len(nonempty)
        c_val = arena.alloc((r1 - r0) * bound * 8, "C values")
        c_idx = arena.alloc(_nbytes((r1 - r0) * bound, plan.out_width), "C indices")
        c_cnt = arena.alloc((r1 - r0) * 4, "C row counts")

        trace = IssueTrace.empty(cfg.n_workers)
        for w, mine in enumerate(round_robin(r1 - r0, cfg.n_workers)):
            for li in mine:
                slot0 = li * bound
                _row(trace.workers[w], spm, cfg, variant, a_rp + li * 4, a_idx, a_val,
                     A.index_width, bl, c_val + slot0 * 8, c_idx, slot0, plan.out_width,
                     c_cnt + li * 4)
        nnz_tile = 0
        for li in range(r1 - r0):
            n = spm.read_uint(c_cnt + li * 4, 4)
            slot0 = li * bound
            cols = spm.read_index_array(c_idx + slot0 * plan.out_width // 8, plan.out_width, n)
            vals = spm.read_f64_array(c_val + slot0 * 8, n)
            col_idx += cols
            values += vals
            row_ptr.append(row_ptr[-1] + n)
            nnz_tile += n
        dma_in = [DmaRequest.linear(n) for n in
                  ((r1 - r0 + 1) * 4, _nbytes(hi - lo, A.index_width), (hi - lo) * 8) if n]
        if t == 0:
            dma_in = b_dma + dma_in
        # compacted output (compaction itself is untimed)
        dma_out = [DmaRequest.linear(n, "SPM", "HBM") for n in
                   ((r1 - r0) * 4, nnz_tile * 8, _nbytes(nnz_tile, plan.out_width)) if n]
        tiles.append(TileRun(trace, dma_in, dma_out))

    C = CsrMatrix(A.rows, B.cols, row_ptr, col_idx, values, plan.out_width)
    report = time_tiles("spmspm", variant, FP64, cfg, tiles,
                        operand_id or f"{A.rows}x{A.cols}nnz{A.nnz}*{B.rows}x{B.cols}nnz{B.nnz}")
    return C, report


def _word(base: int, pos: int, width: int) -> int:
    return base + (pos * width // 8) // 8 * 8


def _row(slots, spm, cfg, variant, rp, a_idx, a_val, a_w, bl: _BLayout,
         c_val, c_idx, slot0, out_w, cnt_addr) -> None:
    use = (STALL,) * cfg.load_use_stall
    slots += (slot_load(rp), slot_load(rp + 4))
    slots += use
    slots.append(INT_OP)
    lo, hi = spm.read_uint(rp, 4), spm.read_uint(rp + 4, 4)
    n_out = 0
    if variant is Variant.SU:
        slots += (SU_CONFIG, SU_CONFIG)
    if hi > lo:
        if variant is Variant.SU:
            a_list = read_indices(IndirectConfig(a_idx + lo * a_w // 8,
                                                 a_w, hi - lo, 0), spm)
        for j in bl.cols:
            b_lo = spm.read_uint(bl.col_ptr + j * 4, 4)
            b_hi = spm.read_uint(bl.col_ptr + j * 4 + 4, 4)
            if variant is Variant.SU:
                acc, matched = _su_merge(slots, spm, a_list, a_idx, a_val, a_w, lo, bl, b_lo, b_hi)
            else:
                acc, matched = _baseline_merge(slots, spm, cfg, a_idx, a_val, a_w, lo, hi,
                                               bl, b_lo, b_hi)
            if matched and acc != 0:
                va = c_val + n_out * 8
                ia = c_idx + (slot0 + n_out) * out_w // 8
                spm.write_f64(va, acc)
                spm.write_uint(ia, out_w // 8, j)
                n_out += 1
                if variant is Variant.SU:
                    slots.append(Slot(SlotKind.INT_OP, 0, 0, (va, ia)))
                else:
                    slots += (STALL,) * cfg.fpu_drain_stall
                    slots += (slot_store(va), slot_store(ia), INT_OP)
            elif matched:
                slots += (INT_OP,) if variant is Variant.SU else \
                    (STALL,) * cfg.fpu_drain_stall + (INT_OP,)
            slots += (INT_OP, INT_OP)
    spm.write_uint(cnt_addr, 4, n_out)
    slots.append(slot_store(cnt_addr))


def _su_merge(slots, spm, a_list, a_idx, a_val, a_w, a_lo, bl, b_lo, b_hi):
    b_w = bl.width
    b_list = read_indices(IndirectConfig(bl.idx + b_lo * b_w // 8,
                                         b_w, b_hi - b_lo, 0), spm)
    res = merge_indices(a_list, b_list, MergeMode.INTERSECT)
    slots += (SU_CONFIG, SU_CONFIG, INT_OP, LOOP_BEGIN)
    # replay the pointer walk to place each comparison's SPM traffic
    matches = {(e.left_pos, e.right_pos) for e in res.entries}
    i = j = 0
    last_a = last_b = -1
    acc = -0.0
    for _ in range(res.comparisons):
        touched = []
        wa, wb = _word(a_idx, a_lo + i, a_w), _word(bl.idx, b_lo + j, b_w)
        if wa != last_a:
            touched.append(wa)
            last_a = wa
        if wb != last_b:
            touched.append(wb)
            last_b = wb
        if (i, j) in matches:
            va, vb = a_val + (a_lo + i) * 8, bl.val + (b_lo + j) * 8
            touched += (va, vb)
            acc = fma64(spm.read_f64(va), spm.read_f64(vb), acc)
            slots.append(Slot(SlotKind.COMPARISON, 2, 1, tuple(touched)))
            i += 1
            j += 1
        else:
            slots.append(Slot(SlotKind.COMPARISON, 0, 1, tuple(touched)))
            if a_list[i] < b_list[j]:
                i += 1
            else:
                j += 1
    slots.append(LOOP_END)
    return acc, bool(matches)


def _baseline_merge(slots, spm, cfg, a_idx, a_val, a_w, lo, hi, bl, b_lo, b_hi):
    use = (STALL,) * cfg.load_use_stall
    b_w = bl.width
    fma = Slot(SlotKind.FPU_FMA, 2)
    slots += (INT_OP,) * 5
    i, j = lo, b_lo
    ia, ib = a_idx + i * a_w // 8, bl.idx + j * b_w // 8
    slots += (slot_load(ia), slot_load(ib))
    slots += use
    ka, kb = spm.read_uint(ia, a_w // 8), spm.read_uint(ib, b_w // 8)
    acc = -0.0
    matched = False
    while True:
        if ka == kb:
            va, vb = a_val + i * 8, bl.val + j * 8
            slots += (COMPARE, slot_load(va), slot_load(vb))
            slots += use
            slots.append(fma)
            acc = fma64(spm.read_f64(va), spm.read_f64(vb), acc)
            matched = True
            i += 1
            j += 1
            slots += (INT_OP, INT_OP, INT_OP)
            if i == hi or j == b_hi:
                break
            ia, ib = a_idx + i * a_w // 8, bl.idx + j * b_w // 8
            slots += (slot_load(ia), slot_load(ib), INT_OP)
            ka, kb = spm.read_uint(ia, a_w // 8), spm.read_uint(ib, b_w // 8)
        elif ka < kb:
            slots += (COMPARE, INT_OP, INT_OP)
            i += 1
            if i == hi:
                break
            ia = a_idx + i * a_w // 8
            slots += (slot_load(ia), INT_OP)
            ka = spm.read_uint(ia, a_w // 8)
        else:
            slots += (COMPARE, INT_OP, INT_OP)
            j += 1
            if j == b_hi:
                break
            ib = bl.idx + j * b_w // 8
            slots += (slot_load(ib), INT_OP)
            kb = spm.read_uint(ib, b_w // 8)
    return acc, matched
