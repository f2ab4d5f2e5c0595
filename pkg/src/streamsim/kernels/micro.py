"""Microkernels: the sparse-dense dot product and the FMA peak loop."""

from __future__ import annotations

from typing import Sequence

from ..machine import (INT_OP, LOOP_BEGIN, LOOP_END, STALL, SU_CONFIG, ClusterConfig,
                       IssueTrace, KernelReport, Slot, SlotKind, make_report, simulate_cluster)
from ..minifloat import FP64, FloatFormat, fma64
from ..streams import IndirectConfig, Scratchpad, gather
from .common import OperandError, SpmArena, Variant, slot_load, slot_store

__all__ = ["sparse_dot", "peak_fma"]


def sparse_dot(a_idx: Sequence[int], a_val: Sequence[float], b: Sequence[float],
               variant: Variant | str = Variant.SU, cfg: ClusterConfig | None = None,
               index_width: int = 32) -> tuple[float, KernelReport]:
    """``sum(a_val[k] * b[a_idx[k]])`` on a single worker (FP64).

    The baseline is the plain-ISA loop (index load, address add, value load,
    operand load, FMA); the SU variant gathers ``b`` through an indirect
    stream and issues one FMA per element under the hardware loop.
    """
    cfg = cfg or ClusterConfig()
    variant = Variant.parse(variant)
    n = len(a_idx)
    if len(a_val) != n:
        raise OperandError("a_idx and a_val differ in length")
    for k, i in enumerate(a_idx):
        if not 0 <= i < len(b):
            raise OperandError(f"index {i} at position {k} outside b (length {len(b)})")
        if k and i <= a_idx[k - 1]:
            raise OperandError(f"a_idx not strictly increasing at position {k}")
    arena = SpmArena(cfg.spm_bytes)
    ib = arena.alloc(-(-n * index_width // 8), "sparse indices")
    vb = arena.alloc(n * 8, "sparse values")
    bb = arena.alloc(len(b) * 8, "dense vector")
    out = arena.alloc(8, "result")
    spm = Scratchpad(cfg.spm_bytes)
    spm.write_index_array(ib, index_width, list(a_idx))
    spm.write_f64_array(vb, [float(v) for v in a_val])
    spm.write_f64_array(bb, [float(v) for v in b])

    slots: list[Slot] = []
    acc = -0.0
    if variant is Variant.SU:
        slots += (SU_CONFIG, SU_CONFIG, INT_OP)
        if n:
            dense = gather(IndirectConfig(ib, index_width, n, bb), spm)
            slots.append(LOOP_BEGIN)
            for k in range(n):
                acc = fma64(spm.read_f64(vb + 8 * k), dense[k], acc)
                slots.append(Slot(SlotKind.FPU_FMA, 2, 0, (vb + 8 * k, bb + 8 * a_idx[k])))
            slots.append(LOOP_END)
    else:
        use = (STALL,) * cfg.load_use_stall
        fma = Slot(SlotKind.FPU_FMA, 2)
        slots += (INT_OP, INT_OP, INT_OP)
        for k in range(n):
            ia = ib + k * index_width // 8
            addr = bb + 8 * spm.read_uint(ia, index_width // 8)
            acc = fma64(spm.read_f64(vb + 8 * k), spm.read_f64(addr), acc)
            slots.append(slot_load(ia))
            slots += use
            slots.append(INT_OP)
            slots.append(slot_load(vb + 8 * k))
            slots.append(slot_load(addr))
            slots += use
            slots.append(fma)
    result = acc if n else 0.0
    slots += (STALL,) * cfg.fpu_drain_stall
    slots.append(slot_store(out))
    spm.write_f64(out, result)
    timing = simulate_cluster(IssueTrace([slots]), cfg)
    report = make_report("sparse_dot", variant.value, FP64, cfg, compute_cycles=timing.cycles,
                         flops=timing.flops, operand_id=f"n{n}", n_workers=1)
    return result, report


def peak_fma(fmt: FloatFormat = FP64, iters: int = 100_000,
             cfg: ClusterConfig | None = None) -> KernelReport:
    """Independent SIMD FMAs back to back under the hardware loop on every worker."""
    cfg = cfg or ClusterConfig()
    if iters <= 0:
        raise ValueError("iters must be positive")
    fma = Slot(SlotKind.FPU_FMA, 2 * fmt.lanes)
    body = [INT_OP, INT_OP, LOOP_BEGIN] + [fma] * iters + [LOOP_END]
    timing = simulate_cluster(IssueTrace([body] * cfg.n_workers), cfg, contention=False)
    return make_report("peak_fma", Variant.SU.value, fmt, cfg, compute_cycles=timing.cycles,
                       flops=timing.flops, operand_id=f"iters{iters}")
