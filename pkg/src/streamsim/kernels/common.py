"""Shared kernel plumbing: variants, SPM planning and tile timing."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..machine import (ClusterConfig, DmaRequest, IssueTrace, KernelReport, Slot, SlotKind,
                       TileRecord, make_report, simulate_cluster)
from ..minifloat import FloatFormat

__all__ = ["Variant", "PlanningError", "OperandError", "SpmArena", "TileRun",
           "round_robin", "time_tiles", "slot_load", "slot_store"]


class Variant(str, enum.Enum):
    BASELINE = "BASELINE"
    SU = "SU"

    @classmethod
    def parse(cls, v: str | Variant) -> Variant:
        try:
            return cls(v.upper() if isinstance(v, str) else v)
        except ValueError:
            raise ValueError(f"unknown variant {v!r} (BASELINE or SU)") from None


class PlanningError(ValueError):
    """The requested tiling cannot be laid out in the scratchpad."""


class OperandError(ValueError):
    pass


class SpmArena:
    """Bump allocator over the scratchpad."""

    def __init__(self, size: int):
        self.size = size
        self.top = 0

    def alloc(self, nbytes: int, what: str, align: int = 8) -> int:
        base = -(-self.top // align) * align
        if base + nbytes > self.size:
            raise PlanningError(f"{what} needs {nbytes} bytes at offset {base}; "
                                f"SPM holds {self.size} (reduce the tile size)")
        self.top = base + nbytes
        return base


def odd_words(n_words: int) -> int:
    """Pad a row pitch to an odd word count so lockstep rows hit distinct banks."""
    return n_words if n_words % 2 else n_words + 1


def round_robin(n_items: int, n_workers: int) -> list[list[int]]:
    return [list(range(w, n_items, n_workers)) for w in range(n_workers)]


def slot_load(addr: int) -> Slot:
    return Slot(SlotKind.LOAD, 0, 0, (addr,))


def slot_store(addr: int) -> Slot:
    return Slot(SlotKind.STORE, 0, 0, (addr,))


@dataclass
class TileRun:
    trace: IssueTrace
    dma_in: list[DmaRequest] = field(default_factory=list)
    dma_out: list[DmaRequest] = field(default_factory=list)


def time_tiles(kernel: str, variant: Variant, fmt: FloatFormat, cfg: ClusterConfig,
               tiles: list[TileRun], operand_id: str = "",
               n_workers: int | None = None) -> KernelReport:
    """Simulate each tile's trace and fold the DMA schedule into one report.

    Tiles without any DMA request are timed as pure compute (no overlap model).
    """
    records, compute, flops, comps, stalls = [], 0, 0, 0, 0
    for t in tiles:
        timing = simulate_cluster(t.trace, cfg)
        records.append(TileRecord(timing.cycles, list(t.dma_in), list(t.dma_out)))
        compute += timing.cycles
        flops += timing.flops
        comps += timing.comparisons
        stalls += timing.bank_stalls
    with_dma = any(r.dma_in or r.dma_out for r in records)
    return make_report(kernel, variant.value, fmt, cfg, compute_cycles=compute, flops=flops,
                       comparisons=comps, tiles=records if with_dma else (),
                       operand_id=operand_id, n_workers=n_workers, bank_stall_cycles=stalls)
