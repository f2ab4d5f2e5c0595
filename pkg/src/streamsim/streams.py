"""Functional model of the per-core stream units (SUs).

Three SUs per worker feed the FPU straight from scratchpad memory:

* affine streams walk up to four nested loops of (bound, byte stride);
* indirect streams read an 8/16/32-bit index array and fetch
  ``data_base + index * elem_bytes``;
* two index readers can be merged (intersection or union of their sorted
  index sequences), with the third SU writing the joint indices back.

Everything here is deterministic and works on a :class:`Scratchpad`
snapshot; the timing side lives in :mod:`streamsim.machine`.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

__all__ = [
    "Scratchpad", "StreamConfigError", "StreamFault",
    "AffineConfig", "IndirectConfig", "MergeConfig", "IndexWriter", "MergeMode",
    "EventKind", "StreamEvent", "MergeEntry", "MergeResult",
    "affine_addresses", "indirect_addresses", "read_indices", "merge_indices",
    "merge_streams", "emit_joint_indices", "gather", "iter_affine_events",
]

DEFAULT_SPM_BYTES = 128 * 1024
_INDEX_FMT = {8: "B", 16: "H", 32: "I"}


class StreamConfigError(ValueError):
    """A stream configuration that can never run (raised before streaming)."""


class StreamFault(RuntimeError):
    """A fault raised while a stream runs; ``position`` is the element index."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at stream position {position})")
        self.position = position


class Scratchpad:
    """Byte-addressed SPM with little-endian typed accessors."""

    def __init__(self, size: int = DEFAULT_SPM_BYTES):
        self.size = size
        self.data = bytearray(size)

    def _check(self, addr: int, n: int) -> None:
        if addr < 0 or addr + n > self.size:
            raise IndexError(f"SPM access [{addr:#x}, {addr + n:#x}) outside {self.size:#x} bytes")

    def read_uint(self, addr: int, nbytes: int) -> int:
        self._check(addr, nbytes)
        return int.from_bytes(self.data[addr:addr + nbytes], "little")

    def write_uint(self, addr: int, nbytes: int, value: int) -> None:
        self._check(addr, nbytes)
        self.data[addr:addr + nbytes] = value.to_bytes(nbytes, "little")

    def read_f64(self, addr: int) -> float:
        self._check(addr, 8)
        return struct.unpack_from("<d", self.data, addr)[0]

    def write_f64(self, addr: int, value: float) -> None:
        self._check(addr, 8)
        struct.pack_into("<d", self.data, addr, value)

    def write_f64_array(self, addr: int, values: Sequence[float]) -> None:
        self._check(addr, 8 * len(values))
        struct.pack_into(f"<{len(values)}d", self.data, addr, *values)

    def read_f64_array(self, addr: int, count: int) -> list[float]:
        self._check(addr, 8 * count)
        return list(struct.unpack_from(f"<{count}d", self.data, addr))

    def write_index_array(self, addr: int, width: int, values: Sequence[int]) -> None:
        n = len(values)
        self._check(addr, n * width // 8)
        limit = 1 << width
        for v in values:
            if not 0 <= v < limit:
                raise ValueError(f"index {v} does not fit {width} bits")
        struct.pack_into(f"<{n}{_INDEX_FMT[width]}", self.data, addr, *values)

    def read_index_array(self, addr: int, width: int, count: int) -> list[int]:
        self._check(addr, count * width // 8)
        return list(struct.unpack_from(f"<{count}{_INDEX_FMT[width]}", self.data, addr))


# ---------------------------------------------------------------------------
# configurations

def _check_elem(elem_bytes: int) -> None:
    if elem_bytes not in (1, 2, 4, 8):
        raise StreamConfigError(f"elem_bytes must be 1, 2, 4 or 8, got {elem_bytes}")


@dataclass(frozen=True)
class AffineConfig:
    """Up to 4 nested loops; dimension 0 is innermost."""

    base: int
    elem_bytes: int
    bounds: tuple[int, ...]
    strides: tuple[int, ...]

    @property
    def rank(self) -> int:
        return len(self.bounds)

    @property
    def length(self) -> int:
        n = 1
        for b in self.bounds:
            n *= b
        return n

    def validate(self, spm_bytes: int = DEFAULT_SPM_BYTES) -> None:
        _check_elem(self.elem_bytes)
        if not 1 <= self.rank <= 4:
            raise StreamConfigError(f"affine streams have rank 1..4, got {self.rank}")
        if len(self.strides) != self.rank:
            raise StreamConfigError("bounds and strides differ in length")
        if any(b < 1 for b in self.bounds):
            raise StreamConfigError(f"bounds must be positive: {self.bounds}")
        if self.base % self.elem_bytes or any(s % self.elem_bytes for s in self.strides):
            raise StreamConfigError("base and strides must be multiples of elem_bytes")
        lo = self.base + sum(min(0, (b - 1) * s) for b, s in zip(self.bounds, self.strides))
        hi = self.base + sum(max(0, (b - 1) * s) for b, s in zip(self.bounds, self.strides))
        if lo < 0 or hi + self.elem_bytes > spm_bytes:
            raise StreamConfigError(
                f"affine stream touches [{lo:#x}, {hi + self.elem_bytes:#x}) outside SPM")


@dataclass(frozen=True)
class IndirectConfig:
    """Index array at ``index_base``; element ``k`` resolves to
    ``data_base + index[k] * elem_bytes``."""

    index_base: int
    index_width: int
    index_count: int
    data_base: int
    elem_bytes: int = 8

    def validate(self, spm_bytes: int = DEFAULT_SPM_BYTES) -> None:
        _check_elem(self.elem_bytes)
        if self.index_width not in _INDEX_FMT:
            raise StreamConfigError(f"index width must be 8, 16 or 32 bits, got {self.index_width}")
        if self.index_count < 0:
            raise StreamConfigError("index_count must be non-negative")
        end = self.index_base + self.index_count * self.index_width // 8
        if self.index_base < 0 or end > spm_bytes:
            raise StreamConfigError("index array lies outside SPM")
        if self.data_base % self.elem_bytes:
            raise StreamConfigError("data_base must be elem_bytes-aligned")


class MergeMode(enum.Enum):
    INTERSECT = "intersect"
    UNION = "union"


@dataclass(frozen=True)
class MergeConfig:
    mode: MergeMode
    left: IndirectConfig
    right: IndirectConfig
    emit_indices: bool = False


@dataclass(frozen=True)
class IndexWriter:
    """Third-SU write stream for joint indices: ``capacity`` slots at ``base``."""

    base: int
    index_width: int
    capacity: int


class EventKind(enum.Enum):
    READ_ADDR = "read"
    WRITE_ADDR = "write"
    INDEX_OUT = "index_out"
    COMPARISON = "comparison"


class StreamEvent(NamedTuple):
    kind: EventKind
    value: int
    su: int


class MergeEntry(NamedTuple):
    index: int
    left_pos: int | None
    right_pos: int | None


@dataclass
class MergeResult:
    entries: list[MergeEntry]
    comparisons: int
    events: list[StreamEvent] = field(default_factory=list)

    @property
    def indices(self) -> list[int]:
        return [e.index for e in self.entries]

    def matches(self) -> list[MergeEntry]:
        return [e for e in self.entries if e.left_pos is not None and e.right_pos is not None]


# ---------------------------------------------------------------------------
# address generation

def affine_addresses(cfg: AffineConfig, spm_bytes: int = DEFAULT_SPM_BYTES) -> list[int]:
    cfg.validate(spm_bytes)
    addrs = [cfg.base]
    # build outward: each dimension repeats everything generated so far
    for bound, stride in zip(cfg.bounds, cfg.strides):
        addrs = [a + i * stride for i in range(bound) for a in addrs]
    return addrs


def read_indices(cfg: IndirectConfig, spm: Scratchpad) -> list[int]:
    cfg.validate(spm.size)
    return spm.read_index_array(cfg.index_base, cfg.index_width, cfg.index_count)


def indirect_addresses(cfg: IndirectConfig, spm: Scratchpad) -> list[int]:
    out = []
    for pos, idx in enumerate(read_indices(cfg, spm)):
        addr = cfg.data_base + idx * cfg.elem_bytes
        if addr < 0 or addr + cfg.elem_bytes > spm.size:
            raise StreamFault(f"indirect address {addr:#x} outside SPM", pos)
        out.append(addr)
    return out


def gather(cfg: IndirectConfig, spm: Scratchpad) -> list[float]:
    """FP64 values fetched by an indirect stream."""
    if cfg.elem_bytes != 8:
        raise StreamConfigError("gather reads FP64 elements")
    return [spm.read_f64(a) for a in indirect_addresses(cfg, spm)]


# ---------------------------------------------------------------------------
# merging

def _check_increasing(seq: Sequence[int], pos: int, side: str) -> None:
    if pos > 0 and seq[pos] <= seq[pos - 1]:
        raise StreamFault(f"{side} index stream not strictly increasing "
                          f"({seq[pos - 1]} then {seq[pos]})", pos)


def merge_indices(left: Sequence[int], right: Sequence[int], mode: MergeMode,
                  record_events: bool = False) -> MergeResult:
    """Two-pointer merge; one comparison per step while both streams are live."""
    i = j = comparisons = 0
    entries: list[MergeEntry] = []
    events: list[StreamEvent] = []
    nl, nr = len(left), len(right)
    if nl:
        _check_increasing(left, 0, "left")
    if nr:
        _check_increasing(right, 0, "right")
    while i < nl and j < nr:
        a, b = left[i], right[j]
        comparisons += 1
        if record_events:
            events.append(StreamEvent(EventKind.COMPARISON, comparisons - 1, 2))
        if a == b:
            entries.append(MergeEntry(a, i, j))
            i += 1
            j += 1
            if i < nl:
                _check_increasing(left, i, "left")
            if j < nr:
                _check_increasing(right, j, "right")
        elif a < b:
            if mode is MergeMode.UNION:
                entries.append(MergeEntry(a, i, None))
            i += 1
            if i < nl:
                _check_increasing(left, i, "left")
        else:
            if mode is MergeMode.UNION:
                entries.append(MergeEntry(b, None, j))
            j += 1
            if j < nr:
                _check_increasing(right, j, "right")
    if mode is MergeMode.UNION:
        # drain without comparisons
        while i < nl:
            entries.append(MergeEntry(left[i], i, None))
            i += 1
            if i < nl:
                _check_increasing(left, i, "left")
        while j < nr:
            entries.append(MergeEntry(right[j], None, j))
            j += 1
            if j < nr:
                _check_increasing(right, j, "right")
    if record_events:
        events.extend(StreamEvent(EventKind.INDEX_OUT, e.index, 2) for e in entries)
    return MergeResult(entries, comparisons, events)


def merge_streams(cfg: MergeConfig, spm: Scratchpad, record_events: bool = False) -> MergeResult:
    left = read_indices(cfg.left, spm)
    right = read_indices(cfg.right, spm)
    return merge_indices(left, right, cfg.mode, record_events)


def emit_joint_indices(result: MergeResult, writer: IndexWriter, spm: Scratchpad) -> int:
    """Write the merged indices contiguously; returns the element count."""
    if writer.index_width not in _INDEX_FMT:
        raise StreamConfigError(f"index width must be 8, 16 or 32 bits, got {writer.index_width}")
    n = len(result.entries)
    if n > writer.capacity:
        raise StreamFault(f"joint-index output overflows its {writer.capacity}-slot region",
                          writer.capacity)
    if n:
        spm.write_index_array(writer.base, writer.index_width, result.indices)
    return n


def iter_affine_events(cfg: AffineConfig, su: int, write: bool = False,
                       spm_bytes: int = DEFAULT_SPM_BYTES) -> Iterator[StreamEvent]:
    kind = EventKind.WRITE_ADDR if write else EventKind.READ_ADDR
    for a in affine_addresses(cfg, spm_bytes):
        yield StreamEvent(kind, a, su)
