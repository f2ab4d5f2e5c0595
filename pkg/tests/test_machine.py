import math

import pytest
from hypothesis import given, settings, strategies as st

from streamsim.machine import (INT_OP, LOOP_BEGIN, LOOP_END, STALL, ClusterConfig, ConfigError,
                               DmaKind, DmaRequest, IssueTrace, Slot, SlotKind,
                               TileRecord, TraceError, dma_cycles, fma_slot, load_config,
                               make_report, overlap_schedule, scale_to_chip, simulate_cluster,
                               simulate_worker, spm_contention)
from streamsim.minifloat import FORMATS, FP8, FP16, FP32, FP64

CFG = ClusterConfig()


def test_default_topology():
    assert CFG.n_clusters == 48
    assert CFG.n_worker_cores == 384
    assert CFG.n_cores == 432
    assert CFG.peak_flops(FP64) == 384 * 2 * CFG.freq_hz


def test_config_overrides_and_errors(tmp_path):
    cfg = ClusterConfig.from_mapping({"n_workers": "4", "freq_hz": "2e9"})
    assert cfg.n_workers == 4 and cfg.freq_hz == 2e9
    with pytest.raises(ConfigError, match="bogus"):
        ClusterConfig.from_mapping({"bogus": 1})
    with pytest.raises(ConfigError):
        ClusterConfig.from_mapping({"n_workers": "eight"})
    with pytest.raises(ConfigError):
        ClusterConfig(n_workers=0)
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nspm_bytes = 65536\n\ndma_startup_cycles = 50  # trailing\n")
    cfg = load_config(p)
    assert cfg.spm_bytes == 65536 and cfg.dma_startup_cycles == 50
    p.write_text('{"spm_banks": 16}')
    assert load_config(p).spm_banks == 16
    p.write_text("spm_banks 16\n")
    with pytest.raises(ConfigError, match=":1:"):
        load_config(p)


# ---------------------------------------------------------------------------
# issue model

def test_empty_trace():
    assert simulate_worker([], CFG).cycles == 0
    assert simulate_cluster(IssueTrace.empty(8), CFG).cycles == 0


def test_fma_loop_full_utilization():
    n = 1000
    slots = [LOOP_BEGIN] + [fma_slot(FP64)] * n + [LOOP_END]
    ws = simulate_worker(slots, CFG)
    assert ws.cycles == n
    assert ws.flops / (2 * ws.cycles) == 1.0


def test_baseline_sparse_dot_five_slots():
    n = 200
    body = [Slot(SlotKind.LOAD), INT_OP, Slot(SlotKind.LOAD), Slot(SlotKind.LOAD), fma_slot(FP64)]
    ws = simulate_worker(body * n, CFG)
    assert ws.cycles == 5 * n
    assert ws.flops / (2 * ws.cycles) == pytest.approx(0.2)


@pytest.mark.parametrize("slots", [
    [LOOP_BEGIN, fma_slot(FP64)],
    [LOOP_END],
    [LOOP_BEGIN, LOOP_END],
    [LOOP_BEGIN, LOOP_BEGIN, fma_slot(FP64), LOOP_END, LOOP_END],
    [LOOP_BEGIN, INT_OP, LOOP_END],
    [LOOP_BEGIN, Slot(SlotKind.LOAD), LOOP_END],
])
def test_malformed_loops_rejected(slots):
    with pytest.raises(TraceError):
        simulate_worker(slots, CFG)


def test_contention_examples():
    assert spm_contention([(w, 8 * w) for w in range(8)], CFG) == {}
    same = spm_contention([(w, 0) for w in range(8)], CFG)
    assert sum(same.values()) == 7 and len(same) == 7
    # stride of 16 words: only banks 0 and 16 are hit
    two = spm_contention([(w, w * 16 * 8) for w in range(8)], CFG)
    assert sum(two.values()) == 6


def test_contention_priority_rotates():
    winners = set()
    for cycle in range(8):
        stalls = spm_contention([(w, 0) for w in range(8)], CFG, cycle)
        winners |= set(range(8)) - set(stalls)
    assert winners == set(range(8))


def test_cluster_lockstep_conflicts():
    load = lambda a: Slot(SlotKind.LOAD, addrs=(a,))
    trace = IssueTrace([[load(0)] for _ in range(8)])
    t = simulate_cluster(trace, CFG)
    # every loser stalls once, in parallel: 7 stall cycles, 2 cycles of wall time
    assert t.cycles == 2 and t.bank_stalls == 7
    assert simulate_cluster(trace, CFG, contention=False).cycles == 1
    spread = IssueTrace([[load(8 * w)] for w in range(8)])
    assert simulate_cluster(spread, CFG).cycles == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["fma", "int", "stall", "load"]), max_size=60),
       st.integers(0, 60), st.integers(0, 5))
def test_util_monotone_and_bounded(kinds, pos, extra):
    table = {"fma": fma_slot(FP64), "int": INT_OP, "stall": STALL,
             "load": Slot(SlotKind.LOAD)}
    slots = [table[k] for k in kinds]

    def util(s):
        ws = simulate_worker(s, CFG)
        return ws.flops / (2 * ws.cycles) if ws.cycles else 0.0

    u = util(slots)
    assert 0.0 <= u <= 1.0
    assert (u == 1.0) == (bool(slots) and all(k == "fma" for k in kinds))
    pos = min(pos, len(slots))
    for filler in (STALL, INT_OP):
        assert util(slots[:pos] + [filler] * extra + slots[pos:]) <= u


# ---------------------------------------------------------------------------
# DMA and double buffering

def test_dma_examples():
    one = DmaRequest.linear(65536)
    assert dma_cycles(one, CFG) == 1124
    # decimal 64 GB/s gives exactly 16 B/cycle per cluster when four share it
    dec = ClusterConfig(group_bw_bytes_per_s=64e9)
    assert dma_cycles(one, dec, active_clusters=4) == 4096 + 100
    # the binary default leaves 17.18 B/cycle per cluster
    assert dma_cycles(one, CFG, active_clusters=4) == math.ceil(65536 / (64 * 2**30 / 1e9 / 4)) + 100
    assert dma_cycles(DmaRequest(DmaKind.D2, 1, 65536), CFG) == dma_cycles(one, CFG)


def test_dma_2d_startups():
    short = DmaRequest(DmaKind.D2, 10, 32)
    assert dma_cycles(short, CFG) == 5 + 10 * 100
    long = DmaRequest(DmaKind.D2, 10, 128)
    assert dma_cycles(long, CFG) == 20 + 100


def test_dma_request_validation():
    with pytest.raises(ConfigError):
        DmaRequest.linear(0)
    with pytest.raises(ConfigError):
        DmaRequest(DmaKind.D1, 2, 64)
    with pytest.raises(ConfigError):
        DmaRequest(DmaKind.D2, 2, 64, src="DRAM")
    with pytest.raises(ConfigError):
        dma_cycles(DmaRequest.linear(64), CFG, active_clusters=5)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 1 << 20), st.integers(1, 1 << 20), st.integers(1, 4), st.integers(1, 4))
def test_dma_monotone(b1, b2, a1, a2):
    lo, hi = sorted((b1, b2))
    alo, ahi = sorted((a1, a2))
    assert dma_cycles(DmaRequest.linear(lo), CFG, alo) <= dma_cycles(DmaRequest.linear(hi), CFG, alo)
    assert dma_cycles(DmaRequest.linear(lo), CFG, alo) <= dma_cycles(DmaRequest.linear(lo), CFG, ahi)


def test_overlap_examples():
    assert overlap_schedule([(1000, 600, 0)] * 4).total == 4600
    assert overlap_schedule([(300, 600, 0)] * 4).total == 2700
    r = overlap_schedule([(700, 50, 80)])
    assert r.total == r.serial == 830
    with pytest.raises(ConfigError):
        overlap_schedule([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2000), st.integers(0, 2000), st.integers(0, 2000)),
                min_size=1, max_size=8))
def test_overlap_never_worse(tiles):
    r = overlap_schedule(tiles)
    assert r.total <= r.serial
    if len(tiles) == 1 or all(i == 0 and o == 0 for _, i, o in tiles):
        assert r.total == r.serial


# ---------------------------------------------------------------------------
# reports and chip scaling

def test_report_formulas():
    rep = make_report("k", "SU", FP64, CFG, compute_cycles=100, flops=800)
    assert rep.fpu_util == 0.5
    # one cluster at 0.5 utilization delivers 8 GFLOP/s
    assert rep.fpu_util * CFG.peak_flops(FP64, "cluster") / 1e9 == 8.0
    assert rep.chip_gflops == pytest.approx(384.0)
    full = make_report("k", "SU", FP64, CFG, compute_cycles=10, flops=160)
    assert full.chip_gflops == pytest.approx(768.0)
    comp = make_report("k", "SU", FP64, CFG, compute_cycles=100, flops=0, comparisons=392)
    assert comp.comp_util == 0.49
    assert comp.chip_gcomps == pytest.approx(188.16)
    assert round(comp.chip_gcomps) == 188


@pytest.mark.parametrize("fmt,peak", [(FP64, 768), (FP32, 1536), (FP16, 3072), (FP8, 6144)])
def test_peak_per_format(fmt, peak):
    rep = make_report("k", "SU", fmt, CFG, compute_cycles=10, flops=10 * 8 * 2 * fmt.lanes)
    assert rep.fpu_util == 1.0 and rep.chip_gflops == pytest.approx(peak)


def test_utilization_bounds_all_formats():
    for fmt in FORMATS.values():
        rep = make_report("k", "SU", fmt, CFG, compute_cycles=7, flops=7 * 8 * 2 * fmt.lanes)
        assert rep.fpu_util == 1.0


def test_scale_to_chip_preserves_compute_bound_util():
    tiles = [TileRecord(5000, [DmaRequest.linear(4096)], [DmaRequest.linear(4096, "SPM", "HBM")])] * 3
    rep = make_report("k", "SU", FP64, CFG, compute_cycles=15000, flops=120000, tiles=tiles)
    chip = scale_to_chip(rep, CFG)
    assert chip.scope == "chip" and chip.active_clusters == 4
    # only the exposed prologue load and epilogue drain see the fair-share slowdown
    def steady(r):
        costs = [t.cost(CFG, r.active_clusters) for t in r.tiles]
        return r.cycles - costs[0].dma_in - costs[-1].dma_out
    assert steady(chip) == steady(rep) == 15000
    assert chip.flops == rep.flops
    # DMA-bound: fair sharing slows the chip-level run down
    heavy = [TileRecord(100, [DmaRequest.linear(65536)], [])] * 3
    rep = make_report("k", "SU", FP64, CFG, compute_cycles=300, flops=2400, tiles=heavy)
    assert scale_to_chip(rep, CFG).fpu_util < rep.fpu_util
