"""Timing model of one compute cluster and its scaling to the full chip.

One cluster has eight single-issue worker cores and a DMA core sharing a
banked scratchpad. Kernels hand the model an :class:`IssueTrace`: one slot
list per worker, each slot taking one cycle. Hardware-loop regions are
bracketed by ``LOOP_BEGIN``/``LOOP_END`` markers that cost nothing, so a
loop body replays with zero overhead slots. :func:`simulate_cluster` runs
the workers in lockstep and charges SPM bank conflicts as stall cycles.

The DMA side is a bandwidth/latency formula per transfer plus a
double-buffered tile schedule; :func:`scale_to_chip` re-evaluates the
transfers with every cluster of a group competing for group bandwidth.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

from .minifloat import FloatFormat, format_by_name

__all__ = [
    "ConfigError", "TraceError", "ClusterConfig", "load_config",
    "SlotKind", "Slot", "IssueTrace", "WorkerStats", "ClusterTiming",
    "simulate_worker", "simulate_cluster", "spm_contention", "bank_of",
    "DmaKind", "DmaRequest", "dma_cycles", "TileCost", "OverlapResult",
    "overlap_schedule", "TileRecord", "KernelReport", "make_report", "scale_to_chip",
    "fma_slot", "STALL", "INT_OP", "SU_CONFIG",
]


class ConfigError(ValueError):
    pass


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    n_workers: int = 8
    spm_bytes: int = 128 * 1024
    spm_banks: int = 32
    bank_word_bytes: int = 8
    freq_hz: float = 1.0e9
    group_bw_bytes_per_s: float = 64 * 2 ** 30
    dma_port_bytes_per_cycle: int = 64
    dma_startup_cycles: int = 100
    n_clusters_per_group: int = 4
    n_groups_per_chiplet: int = 6
    n_chiplets: int = 2
    # in-order pipeline bubbles the kernels insert into their traces
    load_use_stall: int = 1
    fpu_drain_stall: int = 3

    def __post_init__(self) -> None:
        for name in ("n_workers", "spm_bytes", "spm_banks", "bank_word_bytes",
                     "dma_port_bytes_per_cycle", "n_clusters_per_group",
                     "n_groups_per_chiplet", "n_chiplets"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("dma_startup_cycles", "load_use_stall", "fpu_drain_stall"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.freq_hz <= 0 or self.group_bw_bytes_per_s <= 0:
            raise ConfigError("frequency and bandwidth must be positive")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> ClusterConfig:
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown cluster config keys: {', '.join(unknown)}")
        kwargs = {}
        for k, v in values.items():
            typ = int if known[k].type in ("int", int) else float
            try:
                kwargs[k] = typ(v)
            except (TypeError, ValueError):
                raise ConfigError(f"config key {k!r}: cannot read {v!r} as {typ.__name__}") from None
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @property
    def n_clusters(self) -> int:
        return self.n_clusters_per_group * self.n_groups_per_chiplet * self.n_chiplets

    @property
    def n_worker_cores(self) -> int:
        return self.n_clusters * self.n_workers

    @property
    def n_cores(self) -> int:
        """Worker plus DMA cores (host cores excluded)."""
        return self.n_clusters * (self.n_workers + 1)

    def lanes(self, fmt: FloatFormat) -> int:
        return fmt.lanes

    def peak_flops(self, fmt: FloatFormat, scope: str = "chip") -> float:
        workers = self.n_worker_cores if scope == "chip" else self.n_workers
        return workers * 2 * fmt.lanes * self.freq_hz

    def dma_bytes_per_cycle(self, active_clusters: int = 1) -> float:
        if not 1 <= active_clusters <= self.n_clusters_per_group:
            raise ConfigError(f"active_clusters must be in 1..{self.n_clusters_per_group}")
        share = self.group_bw_bytes_per_s / self.freq_hz / active_clusters
        return min(float(self.dma_port_bytes_per_cycle), share)


def load_config(path: str | Path) -> ClusterConfig:
    """Read a flat key/value document: JSON, or ``key = value`` lines."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        values = json.loads(text)
    else:
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (p.strip() for p in line.split("=", 1))
            values[key] = val
    return ClusterConfig.from_mapping(values)


# ---------------------------------------------------------------------------
# issue traces

class SlotKind(enum.IntEnum):
    INT_OP = 0
    LOAD = 1
    STORE = 2
    FPU_FMA = 3
    FPU_SDOTP = 4
    FPU_ADD3 = 5
    SU_CONFIG = 6
    COMPARISON = 7
    STALL = 8
    LOOP_BEGIN = 9
    LOOP_END = 10


FPU_KINDS = frozenset({SlotKind.FPU_FMA, SlotKind.FPU_SDOTP, SlotKind.FPU_ADD3})
_LOOP_OK = FPU_KINDS | {SlotKind.COMPARISON}


class Slot(NamedTuple):
    """One issue slot. ``addrs`` are the SPM bytes touched that cycle, by the
    core or by the stream units feeding it."""

    kind: SlotKind
    flops: int = 0
    comparisons: int = 0
    addrs: tuple[int, ...] = ()


STALL = Slot(SlotKind.STALL)
INT_OP = Slot(SlotKind.INT_OP)
SU_CONFIG = Slot(SlotKind.SU_CONFIG)
LOOP_BEGIN = Slot(SlotKind.LOOP_BEGIN)
LOOP_END = Slot(SlotKind.LOOP_END)


def fma_slot(fmt: FloatFormat, addrs: tuple[int, ...] = ()) -> Slot:
    return Slot(SlotKind.FPU_FMA, 2 * fmt.lanes, 0, addrs)


@dataclass
class IssueTrace:
    workers: list[list[Slot]]

    @classmethod
    def empty(cls, n_workers: int) -> IssueTrace:
        return cls([[] for _ in range(n_workers)])

    def validate(self) -> None:
        for w, slots in enumerate(self.workers):
            in_loop = False
            body = 0
            for i, s in enumerate(slots):
                if s.kind == SlotKind.LOOP_BEGIN:
                    if in_loop:
                        raise TraceError(f"worker {w} slot {i}: nested hardware loop")
                    in_loop, body = True, 0
                elif s.kind == SlotKind.LOOP_END:
                    if not in_loop:
                        raise TraceError(f"worker {w} slot {i}: loop end without begin")
                    if body == 0:
                        raise TraceError(f"worker {w} slot {i}: empty hardware loop")
                    in_loop = False
                elif in_loop:
                    if s.kind not in _LOOP_OK:
                        raise TraceError(f"worker {w} slot {i}: {s.kind.name} inside a "
                                         "hardware loop (only FPU and stream slots replay)")
                    body += 1
            if in_loop:
                raise TraceError(f"worker {w}: unterminated hardware loop")


@dataclass
class WorkerStats:
    cycles: int
    counts: Counter
    flops: int
    comparisons: int
    stall_cycles: int = 0

    @property
    def issue_slots(self) -> int:
        return self.cycles - self.counts.get(SlotKind.STALL, 0) - self.stall_cycles


def _strip(slots: Iterable[Slot]) -> list[Slot]:
    return [s for s in slots if s.kind < SlotKind.LOOP_BEGIN]


def simulate_worker(slots: Sequence[Slot], cfg: ClusterConfig | None = None) -> WorkerStats:
    """Contention-free cycle count of one worker."""
    IssueTrace([list(slots)]).validate()
    body = _strip(slots)
    counts = Counter(s.kind for s in body)
    return WorkerStats(len(body), counts, sum(s.flops for s in body),
                       sum(s.comparisons for s in body))


def bank_of(addr: int, cfg: ClusterConfig) -> int:
    return (addr // cfg.bank_word_bytes) % cfg.spm_banks


def spm_contention(accesses: Sequence[tuple[int, int]], cfg: ClusterConfig,
                   cycle: int = 0) -> dict[int, int]:
    """Stall cycles per worker for one cycle's (worker, address) requests.

    Each bank serves one request; every further request to it costs its
    worker one stall. Priority rotates with ``cycle``.
    """
    by_bank: dict[int, list[int]] = {}
    for w, a in accesses:
        by_bank.setdefault(bank_of(a, cfg), []).append(w)
    stalls: dict[int, int] = {}
    n = cfg.n_workers
    for ws in by_bank.values():
        if len(ws) > 1:
            ws = sorted(ws, key=lambda w: (w - cycle) % n)
            for w in ws[1:]:
                stalls[w] = stalls.get(w, 0) + 1
    return stalls


@dataclass
class ClusterTiming:
    cycles: int
    workers: list[WorkerStats]

    @property
    def flops(self) -> int:
        return sum(w.flops for w in self.workers)

    @property
    def comparisons(self) -> int:
        return sum(w.comparisons for w in self.workers)

    @property
    def bank_stalls(self) -> int:
        return sum(w.stall_cycles for w in self.workers)


def simulate_cluster(trace: IssueTrace, cfg: ClusterConfig, contention: bool = True) -> ClusterTiming:
    """Run all workers in lockstep; cluster cycles = slowest worker."""
    trace.validate()
    streams = [_strip(s) for s in trace.workers]
    nw = len(streams)
    stats = [WorkerStats(0, Counter(s.kind for s in st), sum(s.flops for s in st),
                         sum(s.comparisons for s in st)) for st in streams]
    if not contention:
        for st, ws in zip(streams, stats):
            ws.cycles = len(st)
        return ClusterTiming(max((w.cycles for w in stats), default=0), stats)

    pos = [0] * nw
    pending = [0] * nw
    lengths = [len(s) for s in streams]
    active = [w for w in range(nw) if lengths[w]]
    word, banks = cfg.bank_word_bytes, cfg.spm_banks
    cycle = 0
    while active:
        reqs: dict[int, list[int]] = {}
        for w in active:
            if pending[w]:
                pending[w] -= 1
                stats[w].stall_cycles += 1
                continue
            s = streams[w][pos[w]]
            pos[w] += 1
            for a in s.addrs:
                b = (a // word) % banks
                if b in reqs:
                    reqs[b].append(w)
                else:
                    reqs[b] = [w]
        for ws in reqs.values():
            if len(ws) > 1:
                ws.sort(key=lambda w: (w - cycle) % nw)
                for w in ws[1:]:
                    pending[w] += 1
        cycle += 1
        still = []
        for w in active:
            if pos[w] == lengths[w] and not pending[w]:
                stats[w].cycles = cycle
            else:
                still.append(w)
        active = still
    return ClusterTiming(max((w.cycles for w in stats), default=0), stats)


# ---------------------------------------------------------------------------
# DMA and double buffering

class DmaKind(enum.Enum):
    D1 = "1d"
    D2 = "2d"


@dataclass(frozen=True)
class DmaRequest:
    kind: DmaKind
    rows: int
    row_bytes: int
    src: str = "HBM"
    dst: str = "SPM"

    def __post_init__(self) -> None:
        if self.kind is DmaKind.D1 and self.rows != 1:
            raise ConfigError("1D transfers have exactly one row")
        if self.rows < 1 or self.row_bytes < 1:
            raise ConfigError(f"DMA request moves no data ({self.rows} x {self.row_bytes} bytes)")
        if {self.src, self.dst} - {"HBM", "SPM"}:
            raise ConfigError("DMA endpoints are HBM or SPM")

    @classmethod
    def linear(cls, nbytes: int, src: str = "HBM", dst: str = "SPM") -> DmaRequest:
        return cls(DmaKind.D1, 1, nbytes, src, dst)

    @property
    def total_bytes(self) -> int:
        return self.rows * self.row_bytes


def dma_cycles(req: DmaRequest, cfg: ClusterConfig, active_clusters: int = 1) -> int:
    bw = cfg.dma_bytes_per_cycle(active_clusters)
    startups = req.rows if (req.rows > 1 and req.row_bytes < cfg.dma_port_bytes_per_cycle) else 1
    return math.ceil(req.total_bytes / bw) + startups * cfg.dma_startup_cycles


class TileCost(NamedTuple):
    compute: int
    dma_in: int
    dma_out: int


@dataclass(frozen=True)
class OverlapResult:
    total: int
    serial: int


def overlap_schedule(tiles: Sequence[TileCost | tuple[int, int, int]]) -> OverlapResult:
    """Double-buffered pipeline: tile t computes while t+1 loads and t-1 drains."""
    if not tiles:
        raise ConfigError("overlap_schedule needs at least one tile")
    tiles = [TileCost(*t) for t in tiles]
    n = len(tiles)
    total = tiles[0].dma_in + tiles[-1].dma_out
    for t in range(n):
        nxt = tiles[t + 1].dma_in if t + 1 < n else 0
        prev = tiles[t - 1].dma_out if t > 0 else 0
        total += max(tiles[t].compute, nxt + prev)
    serial = sum(t.compute + t.dma_in + t.dma_out for t in tiles)
    return OverlapResult(total, serial)


# ---------------------------------------------------------------------------
# reports

@dataclass
class TileRecord:
    compute: int
    dma_in: list[DmaRequest]
    dma_out: list[DmaRequest]

    def cost(self, cfg: ClusterConfig, active_clusters: int) -> TileCost:
        return TileCost(self.compute,
                        sum(dma_cycles(r, cfg, active_clusters) for r in self.dma_in),
                        sum(dma_cycles(r, cfg, active_clusters) for r in self.dma_out))

    @property
    def bytes(self) -> int:
        return sum(r.total_bytes for r in self.dma_in + self.dma_out)


@dataclass
class KernelReport:
    kernel: str
    variant: str
    fmt: str
    operand_id: str
    cycles: int
    compute_cycles: int
    flops: int
    comparisons: int
    n_workers: int
    lanes: int
    fpu_util: float
    comp_util: float
    chip_gflops: float
    chip_gcomps: float
    dma_bytes: int
    dma_cycles: int
    overlap_total_cycles: int
    serial_total_cycles: int
    scope: str = "cluster"
    active_clusters: int = 1
    bank_stall_cycles: int = 0
    tiles: list[TileRecord] = field(default_factory=list, repr=False)

    def record(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("tiles")
        return d


def make_report(kernel: str, variant: str, fmt: FloatFormat | str, cfg: ClusterConfig, *,
                compute_cycles: int, flops: int, comparisons: int = 0,
                tiles: Sequence[TileRecord] = (), operand_id: str = "",
                n_workers: int | None = None, active_clusters: int = 1,
                bank_stall_cycles: int = 0, scope: str = "cluster") -> KernelReport:
    fmt = format_by_name(fmt) if isinstance(fmt, str) else fmt
    n_workers = cfg.n_workers if n_workers is None else n_workers
    tiles = list(tiles)
    if tiles:
        costs = [t.cost(cfg, active_clusters) for t in tiles]
        ov = overlap_schedule(costs)
        total, serial = ov.total, ov.serial
        dma_cyc = sum(c.dma_in + c.dma_out for c in costs)
    else:
        total = serial = compute_cycles
        dma_cyc = 0
    cycles = total
    if cycles > 0:
        fpu_util = flops / (2 * fmt.lanes * n_workers * cycles)
        comp_util = comparisons / (n_workers * cycles)
    else:
        fpu_util = comp_util = 0.0
    return KernelReport(
        kernel=kernel, variant=variant, fmt=fmt.name, operand_id=operand_id,
        cycles=cycles, compute_cycles=compute_cycles, flops=flops, comparisons=comparisons,
        n_workers=n_workers, lanes=fmt.lanes, fpu_util=fpu_util, comp_util=comp_util,
        chip_gflops=fpu_util * cfg.peak_flops(fmt) / 1e9,
        chip_gcomps=comp_util * cfg.n_worker_cores * cfg.freq_hz / 1e9,
        dma_bytes=sum(t.bytes for t in tiles), dma_cycles=dma_cyc,
        overlap_total_cycles=total, serial_total_cycles=serial, scope=scope,
        active_clusters=active_clusters, bank_stall_cycles=bank_stall_cycles, tiles=tiles)


def scale_to_chip(report: KernelReport, cfg: ClusterConfig) -> KernelReport:
    """Every cluster runs the same tile stream; DMA shares group bandwidth."""
    return make_report(
        report.kernel, report.variant, report.fmt, cfg,
        compute_cycles=report.compute_cycles, flops=report.flops,
        comparisons=report.comparisons, tiles=report.tiles, operand_id=report.operand_id,
        n_workers=report.n_workers, active_clusters=cfg.n_clusters_per_group,
        bank_stall_cycles=report.bank_stall_cycles, scope="chip")
