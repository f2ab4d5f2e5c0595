"""3D stencils (FP64) in baseline and stream-unit variants.

Tiles are slabs of interior z-planes. A tile's input slab (with halo) and
its output slab live in the scratchpad with the x pitch padded to an odd
word count; two buffers alternate between tiles for double buffering.

The SU variant drives the grid operand through an indirect stream over a
per-worker copy of the tap-offset index array; coefficients sit in FP
registers and the third SU writes each finished point. Every point is one
hardware-loop body of ``taps`` FMAs. The baseline spends an address add, a
load and the load-use bubble on every tap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..machine import (INT_OP, LOOP_BEGIN, LOOP_END, STALL, SU_CONFIG, ClusterConfig,
                       DmaKind, DmaRequest, IssueTrace, KernelReport, Slot, SlotKind)
from ..minifloat import FP64, fma64
from ..operands import DenseTensor
from ..streams import IndirectConfig, Scratchpad, indirect_addresses
from .common import (OperandError, PlanningError, SpmArena, TileRun, Variant, odd_words,
                     round_robin, slot_load, slot_store, time_tiles)

__all__ = ["StencilSpec", "j3d27pt", "star_stencil", "box_stencil", "STENCIL_SUITE",
           "stencil", "plan_stencil"]


@dataclass(frozen=True)
class StencilSpec:
    name: str
    offsets: tuple[tuple[int, int, int], ...]
    coeffs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.offsets) != len(self.coeffs) or not self.offsets:
            raise ValueError("a stencil needs one coefficient per tap")

    @property
    def taps(self) -> int:
        return len(self.offsets)

    @property
    def halo(self) -> int:
        return max(max(abs(d) for d in off) for off in self.offsets)


def box_stencil(radius: int = 1, name: str | None = None) -> StencilSpec:
    r = range(-radius, radius + 1)
    offs = tuple((dz, dy, dx) for dz in r for dy in r for dx in r)
    # weight by Manhattan distance from the centre: 1/2, 1/4, 1/8, ...
    coeffs = tuple(0.5 ** (1 + abs(dz) + abs(dy) + abs(dx)) / 4 for dz, dy, dx in offs)
    return StencilSpec(name or f"box{len(offs)}pt", offs, coeffs)


def star_stencil(radius: int = 1, name: str | None = None) -> StencilSpec:
    offs = [(0, 0, 0)]
    for d in range(1, radius + 1):
        for axis in range(3):
            for s in (-d, d):
                o = [0, 0, 0]
                o[axis] = s
                offs.append(tuple(o))
    coeffs = (0.5,) + (0.5 / (len(offs) - 1),) * (len(offs) - 1)
    return StencilSpec(name or f"star{len(offs)}pt", tuple(offs), coeffs)


def j3d27pt() -> StencilSpec:
    return box_stencil(1, "j3d27pt")


STENCIL_SUITE = {
    "j3d27pt": j3d27pt,
    "star7pt": lambda: star_stencil(1),
    "star13pt": lambda: star_stencil(2),
    "box27pt": lambda: box_stencil(1),
}


@dataclass(frozen=True)
class StencilPlan:
    tile_z: int
    pitch: int          # words per x row in SPM
    in_base: tuple[int, int]
    out_base: tuple[int, int]
    idx_base: int
    idx_stride: int     # bytes between per-worker index copies
    idx_width: int


def plan_stencil(spec: StencilSpec, dims: tuple[int, int, int], cfg: ClusterConfig,
                 tile_z: int | None = None) -> StencilPlan:
    nz, ny, nx = dims
    h = spec.halo
    if min(dims) <= 2 * h:
        raise OperandError(f"grid {dims} leaves no interior for halo {h}")
    pitch = odd_words(nx)
    plane = ny * pitch * 8
    max_index = ((2 * h) * ny + 2 * h) * pitch + 2 * h
    idx_width = 16 if max_index < 1 << 16 else 32
    idx_words = odd_words(-(-spec.taps * idx_width // 64))
    interior = nz - 2 * h

    def layout(tz: int) -> StencilPlan:
        arena = SpmArena(cfg.spm_bytes)
        ins = tuple(arena.alloc((tz + 2 * h) * plane, f"input slab buffer {b}") for b in (0, 1))
        outs = tuple(arena.alloc(tz * plane, f"output slab buffer {b}") for b in (0, 1))
        idx = arena.alloc(cfg.n_workers * idx_words * 8, "tap index arrays")
        return StencilPlan(tz, pitch, ins, outs, idx, idx_words * 8, idx_width)

    if tile_z is not None:
        if not 1 <= tile_z <= interior:
            raise PlanningError(f"tile_z must be in 1..{interior}")
        return layout(tile_z)
    for tz in range(interior, 0, -1):
        try:
            return layout(tz)
        except PlanningError:
            continue
    return layout(1)  # raises with the size breakdown


def _tap_geometry(spec: StencilSpec, ny: int, pitch: int):
    h = spec.halo
    # SU: unsigned indices from the corner (-h, -h, -h) of the point
    su_idx = [((dz + h) * ny + (dy + h)) * pitch + (dx + h) for dz, dy, dx in spec.offsets]
    # baseline: signed byte offsets from the point, folded into immediates
    imm = [((dz * ny + dy) * pitch + dx) * 8 for dz, dy, dx in spec.offsets]
    return su_idx, imm


def stencil(spec: StencilSpec, grid: DenseTensor, variant: Variant | str = Variant.SU,
            cfg: ClusterConfig | None = None, tile_z: int | None = None,
            operand_id: str = "") -> tuple[DenseTensor, KernelReport]:
    cfg = cfg or ClusterConfig()
    variant = Variant.parse(variant)
    if grid.fmt != FP64 or len(grid.dims) != 3:
        raise OperandError("stencils run on 3D FP64 grids")
    nz, ny, nx = grid.dims
    plan = plan_stencil(spec, grid.dims, cfg, tile_z)
    h, pitch, taps = spec.halo, plan.pitch, spec.taps
    coeffs = [float(c) for c in spec.coeffs]
    su_idx, imm = _tap_geometry(spec, ny, pitch)
    per_word = 64 // plan.idx_width
    out = grid.data.copy()
    spm = Scratchpad(cfg.spm_bytes)
    for w in range(cfg.n_workers):
        spm.write_index_array(plan.idx_base + w * plan.idx_stride, plan.idx_width, su_idx)

    tiles = []
    for t, z0 in enumerate(range(h, nz - h, plan.tile_z)):
        z1 = min(z0 + plan.tile_z, nz - h)
        buf = t % 2
        in_base, out_base = plan.in_base[buf], plan.out_base[buf]
        slab = grid.data[z0 - h:z1 + h]
        padded = np.zeros((slab.shape[0], ny, pitch))
        padded[:, :, :nx] = slab
        spm.write_f64_array(in_base, padded.ravel().tolist())

        rows = [(z, y) for z in range(z0, z1) for y in range(h, ny - h)]
        trace = IssueTrace.empty(cfg.n_workers)
        for w, mine in enumerate(round_robin(len(rows), cfg.n_workers)):
            slots = trace.workers[w]
            idx_base = plan.idx_base + w * plan.idx_stride
            for r in mine:
                z, y = rows[r]
                zl = z - (z0 - h)
                row_in = in_base + (zl * ny + y) * pitch * 8
                row_out = out_base + ((z - z0) * ny + y) * pitch * 8
                if variant is Variant.SU:
                    _su_row(slots, spm, coeffs, idx_base, taps, per_word, row_in, row_out,
                            ny, pitch, h, nx)
                else:
                    _baseline_row(slots, spm, coeffs, imm, row_in, row_out, h, nx, cfg)
        # copy the tile's results back out of the SPM image
        for z in range(z0, z1):
            for y in range(h, ny - h):
                base = out_base + ((z - z0) * ny + y) * pitch * 8
                out[z, y, h:nx - h] = spm.read_f64_array(base + h * 8, nx - 2 * h)
        dma_in = [DmaRequest(DmaKind.D2, slab.shape[0] * ny, nx * 8)]
        dma_out = [DmaRequest(DmaKind.D2, (z1 - z0) * (ny - 2 * h), (nx - 2 * h) * 8, "SPM", "HBM")]
        tiles.append(TileRun(trace, dma_in, dma_out))

    report = time_tiles(spec.name, variant, FP64, cfg, tiles, operand_id or f"{nz}x{ny}x{nx}")
    return DenseTensor(out), report


def _su_row(slots, spm, coeffs, idx_base, taps, per_word, row_in, row_out, ny, pitch, h, nx):
    slots += (SU_CONFIG, SU_CONFIG, SU_CONFIG, INT_OP, INT_OP, LOOP_BEGIN)
    last = taps - 1
    for x in range(h, nx - h):
        corner = row_in + ((x - h) - (h * ny + h) * pitch) * 8
        cfg = IndirectConfig(idx_base, 64 // per_word, taps, corner, 8)
        addrs = indirect_addresses(cfg, spm)
        acc = -0.0
        dst = row_out + x * 8
        for k, a in enumerate(addrs):
            acc = fma64(coeffs[k], spm.read_f64(a), acc)
            touched = (a,)
            if k % per_word == 0:
                touched += (idx_base + (k // per_word) * 8,)
            if k == last:
                touched += (dst,)
            slots.append(Slot(SlotKind.FPU_FMA, 2, 0, touched))
        spm.write_f64(dst, acc)
    slots.append(LOOP_END)


def _baseline_row(slots, spm, coeffs, imm, row_in, row_out, h, nx, cfg):
    use = (STALL,) * cfg.load_use_stall
    drain = (STALL,) * cfg.fpu_drain_stall
    fma = Slot(SlotKind.FPU_FMA, 2)
    slots += (INT_OP, INT_OP)
    for x in range(h, nx - h):
        centre = row_in + x * 8
        acc = -0.0
        for c, off in zip(coeffs, imm):
            a = centre + off
            acc = fma64(c, spm.read_f64(a), acc)
            slots.append(INT_OP)
            slots.append(slot_load(a))
            slots += use
            slots.append(fma)
        dst = row_out + x * 8
        spm.write_f64(dst, acc)
        slots += drain
        slots.append(slot_store(dst))
        slots += (INT_OP, INT_OP)
