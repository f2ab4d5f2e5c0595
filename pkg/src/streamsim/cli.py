"""Command-line entry point: ``run``, ``sweep`` and ``compare``.

Every record is a flat dict (JSON object / CSV row) carrying the kernel
metrics, the validation verdict, the seed and the fully resolved cluster
configuration (``cfg_*`` fields). Wall-clock metadata only appears in the
``metadata`` member of JSON reports, never inside records.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .data import MatrixMarketError, gen_grid, gen_random_sparse, read_matrix_market, coo_to_csr
from .kernels import (STENCIL_SUITE, OperandError, PlanningError, Variant, peak_fma,
                      sparse_dot, spmm, spmspm, stencil)
from .kernels import golden
from .machine import ClusterConfig, ConfigError, KernelReport, load_config, scale_to_chip
from .minifloat import FP64, FloatFormat, _fma_raw, decode, encode, format_by_name
from .operands import CsrError, CsrMatrix, first_difference

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
KERNELS = ("stencil", "spmm", "spmspm", "sparse_dot", "peak_fma")
MAX_SWEEP_RUNS = 10_000

RECORD_FIELDS = [
    "kernel", "variant", "operand_id", "format", "seed", "scope", "cycles", "compute_cycles",
    "flops", "comparisons", "fpu_util", "comp_util", "chip_gflops", "chip_gcomps", "dma_bytes",
    "dma_cycles", "overlap_total_cycles", "serial_total_cycles", "speedup", "validated", "error",
]
CFG_FIELDS = [f"cfg_{f.name}" for f in dataclasses.fields(ClusterConfig)]


class ValidationError(Exception):
    pass


class OperandLoadError(Exception):
    pass


@dataclass
class ExperimentSpec:
    kernel: str
    variants: tuple[str, ...] = ("BASELINE", "SU")
    fmt: str = "FP64"
    matrix: str | None = None
    random: tuple[int, int, float] | None = None
    seed: int = 0
    n_cols: int = 16
    right_density: float = 0.01
    stencil: str = "j3d27pt"
    grid: tuple[int, int, int] = (16, 16, 16)
    iters: int = 100_000
    tile_rows: int | None = None
    tile_z: int | None = None
    scope: str = "chip"

    def __post_init__(self) -> None:
        if self.kernel not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kernel!r}; choose from {', '.join(KERNELS)}")
        self.variants = tuple(Variant.parse(v).value for v in self.variants)
        fmt = format_by_name(self.fmt)
        if self.kernel in ("stencil", "spmspm", "sparse_dot") and fmt != FP64:
            raise ConfigError(f"{self.kernel} runs in FP64 only")
        if self.kernel in ("spmm", "spmspm", "sparse_dot") and self.matrix is None and self.random is None:
            raise ConfigError(f"{self.kernel} needs --matrix or --random")
        if self.scope not in ("chip", "cluster"):
            raise ConfigError("scope is 'chip' or 'cluster'")


# ---------------------------------------------------------------------------
# operands and golden checks

def _operand_id(spec: ExperimentSpec) -> str:
    if spec.kernel == "stencil":
        return f"{spec.stencil}@{'x'.join(map(str, spec.grid))}s{spec.seed}"
    if spec.kernel == "peak_fma":
        return f"iters{spec.iters}"
    if spec.matrix is not None:
        return Path(spec.matrix).stem
    r, c, d = spec.random
    return f"rand{r}x{c}d{d:g}s{spec.seed}"


def load_matrix(spec: ExperimentSpec) -> CsrMatrix:
    if spec.matrix is not None:
        try:
            coo = read_matrix_market(spec.matrix)
        except (OSError, UnicodeDecodeError) as e:
            raise OperandLoadError(f"cannot read {spec.matrix}: {e}") from None
        except MatrixMarketError as e:
            raise OperandLoadError(f"{spec.matrix}: {e}") from None
        return coo_to_csr(coo, 32 if coo.cols > 1 << 16 else 16 if coo.cols > 256 else 8)
    r, c, d = spec.random
    return gen_random_sparse(r, c, d, spec.seed)


def _check_dense(name: str, got: np.ndarray, want: np.ndarray) -> None:
    where = first_difference(got, want)
    if where is not None:
        if where == ():
            raise ValidationError(f"{name}: shape {got.shape} differs from reference {want.shape}")
        raise ValidationError(f"{name}: first differing element {where}: "
                              f"got {got[where]!r}, reference {want[where]!r}")


def _narrow_spmm_ref(A: CsrMatrix, B: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    C = np.zeros((A.rows, B.shape[1]))
    for i in range(A.rows):
        cols, vals = A.row(i)
        if not cols:
            continue
        a = [encode(fmt, v).raw for v in vals]
        for j in range(B.shape[1]):
            acc = fmt.sign_bit
            for k, av in zip(cols, a):
                acc = _fma_raw(fmt, av, encode(fmt, float(B[k, j])).raw, acc)
            C[i, j] = decode(fmt, acc)
    return C


def execute(spec: ExperimentSpec, cfg: ClusterConfig, variant: str, operands: dict):
    """Run one variant; returns (report, validated)."""
    v = Variant.parse(variant)
    if spec.kernel == "peak_fma":
        rep = peak_fma(format_by_name(spec.fmt), spec.iters, cfg)
        return rep, rep.flops == 2 * format_by_name(spec.fmt).lanes * spec.iters * cfg.n_workers
    if spec.kernel == "stencil":
        st, grid = operands["stencil"], operands["grid"]
        out, rep = stencil(st, grid, v, cfg, spec.tile_z, _operand_id(spec))
        if "ref" not in operands:
            operands["ref"] = golden.stencil_ref(grid.data, st.offsets, st.coeffs)
        _check_dense("stencil", out.data, operands["ref"])
        return rep, True
    if spec.kernel == "spmm":
        A, B = operands["A"], operands["B"]
        fmt = format_by_name(spec.fmt)
        out, rep = spmm(A, B, v, cfg, fmt, spec.tile_rows, operand_id=_operand_id(spec))
        if "ref" not in operands:
            operands["ref"] = golden.spmm_ref(A, B.data) if fmt == FP64 \
                else _narrow_spmm_ref(A, B.data, fmt)
        _check_dense("spmm", out.data, operands["ref"])
        return rep, True
    if spec.kernel == "spmspm":
        A, B = operands["A"], operands["B"]
        C, rep = spmspm(A, B, v, cfg, spec.tile_rows, _operand_id(spec))
        if "ref" not in operands:
            operands["ref"] = golden.spmspm_ref(A.to_dense(), B.to_dense(),
                                                _mask(A), _mask(B))
        got = {(i, C.col_idx[k]): C.values[k]
               for i in range(C.rows) for k in range(C.row_ptr[i], C.row_ptr[i + 1])}
        ref = operands["ref"]
        if got.keys() != ref.keys():
            miss = sorted(set(got) ^ set(ref))[0]
            raise ValidationError(f"spmspm: sparsity differs first at {miss}")
        for key in sorted(ref):
            if np.float64(got[key]).view(np.uint64) != np.float64(ref[key]).view(np.uint64):
                raise ValidationError(f"spmspm: first differing element {key}: "
                                      f"got {got[key]!r}, reference {ref[key]!r}")
        return rep, True
    # sparse_dot: row 0 of the operand matrix against a dense vector
    A, b = operands["A"], operands["b"]
    idx, vals = A.row(0)
    res, rep = sparse_dot(idx, vals, b, v, cfg)
    want = golden.sparse_dot_ref(idx, vals, b)
    if np.float64(res).view(np.uint64) != np.float64(want).view(np.uint64):
        raise ValidationError(f"sparse_dot: got {res!r}, reference {want!r}")
    return rep, True


def _mask(M: CsrMatrix) -> np.ndarray:
    mask = np.zeros((M.rows, M.cols), dtype=bool)
    for i in range(M.rows):
        mask[i, M.row(i)[0]] = True
    return mask


def build_operands(spec: ExperimentSpec) -> dict:
    if spec.kernel == "peak_fma":
        return {}
    if spec.kernel == "stencil":
        if spec.stencil not in STENCIL_SUITE:
            raise ConfigError(f"unknown stencil {spec.stencil!r}; choose from "
                              f"{', '.join(STENCIL_SUITE)}")
        return {"stencil": STENCIL_SUITE[spec.stencil](), "grid": gen_grid(spec.grid, seed=spec.seed)}
    A = load_matrix(spec)
    if spec.kernel == "spmm":
        fmt = format_by_name(spec.fmt)
        B = gen_grid((A.cols, spec.n_cols), seed=spec.seed + 1)
        if fmt != FP64:
            B.data = np.vectorize(lambda x: decode(fmt, encode(fmt, float(x)).raw))(B.data)
            A = dataclasses.replace(A, values=[decode(fmt, encode(fmt, v).raw) for v in A.values])
            B.fmt = fmt
        return {"A": A, "B": B}
    if spec.kernel == "spmspm":
        return {"A": A, "B": gen_random_sparse(A.cols, A.cols, spec.right_density, spec.seed + 1)}
    return {"A": A, "b": gen_grid((A.cols,), seed=spec.seed + 1).data}


# ---------------------------------------------------------------------------
# records

def _fmt_value(v: Any) -> Any:
    if isinstance(v, float):
        return float(repr(v)) if v == v else None
    return v


def make_record(spec: ExperimentSpec, cfg: ClusterConfig, variant: str,
                report: KernelReport | None, validated: bool, error: str = "") -> dict:
    rec: dict[str, Any] = {k: None for k in RECORD_FIELDS}
    rec.update(kernel=spec.kernel, variant=variant, operand_id=_operand_id(spec),
               format=spec.fmt, seed=spec.seed, scope=spec.scope, validated=validated,
               error=error)
    if report is not None:
        for k in RECORD_FIELDS:
            if hasattr(report, k) and k not in ("kernel", "variant", "operand_id", "scope"):
                rec[k] = _fmt_value(getattr(report, k))
    for k, v in cfg.to_dict().items():
        rec[f"cfg_{k}"] = v
    return rec


def run_records(spec: ExperimentSpec, cfg: ClusterConfig) -> list[dict]:
    """All requested variants of one experiment; a failure becomes an error record."""
    try:
        operands = build_operands(spec)
    except (OperandLoadError, CsrError, MatrixMarketError) as e:
        return [make_record(spec, cfg, "+".join(spec.variants), None, False, f"operand: {e}")]
    recs, cycles = [], {}
    for variant in spec.variants:
        try:
            rep, ok = execute(spec, cfg, variant, operands)
        except ValidationError as e:
            recs.append(make_record(spec, cfg, variant, None, False, f"validation: {e}"))
            continue
        except (ConfigError, PlanningError, OperandError, ValueError) as e:
            recs.append(make_record(spec, cfg, variant, None, False, f"config: {e}"))
            continue
        if spec.scope == "chip":
            rep = scale_to_chip(rep, cfg)
        cycles[variant] = rep.cycles
        recs.append(make_record(spec, cfg, variant, rep, ok))
    if "BASELINE" in cycles and "SU" in cycles and cycles["SU"]:
        for r in recs:
            if r["cycles"] is not None:
                r["speedup"] = cycles["BASELINE"] / cycles["SU"]
    return recs


def _exit_code(recs: list[dict]) -> int:
    errors = [r["error"] for r in recs if r["error"]]
    if any(e.startswith("operand") for e in errors):
        return EXIT_IO
    if any(e.startswith("config") for e in errors):
        return EXIT_CONFIG
    if errors or not all(r["validated"] for r in recs):
        return EXIT_VALIDATION
    return EXIT_OK


def write_csv(recs: list[dict], out: io.TextIOBase) -> None:
    w = csv.DictWriter(out, fieldnames=RECORD_FIELDS + CFG_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in recs:
        w.writerow({k: ("" if r.get(k) is None else r[k]) for k in w.fieldnames})


def read_records(path: str | Path) -> list[dict]:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        rows = list(csv.DictReader(io.StringIO(text)))
        for r in rows:
            for k in ("cycles", "flops", "comparisons"):
                r[k] = int(r[k]) if r.get(k) else None
            for k in ("fpu_util", "comp_util", "chip_gflops", "chip_gcomps"):
                r[k] = float(r[k]) if r.get(k) else None
        return rows
    doc = json.loads(text)
    return doc["records"] if isinstance(doc, dict) else doc


# ---------------------------------------------------------------------------
# argument handling

def _parse_random(text: str) -> tuple[int, int, float]:
    try:
        r, c, d = text.split(",")
        return int(r), int(c), float(d)
    except ValueError:
        raise ConfigError(f"--random expects rows,cols,density; got {text!r}") from None


def _parse_dims(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(f"--grid expects Z,Y,X; got {text!r}") from None
    if len(dims) != 3:
        raise ConfigError(f"--grid expects three dims; got {text!r}")
    return dims


def resolve_config(args) -> ClusterConfig:
    values: dict[str, Any] = {}
    if args.config:
        try:
            values.update(load_config(args.config).to_dict())
        except OSError as e:
            raise OperandLoadError(f"cannot read config {args.config}: {e}") from None
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value; got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    return ClusterConfig.from_mapping(values)


def _common(p: argparse.ArgumentParser, sweep: bool) -> None:
    many = " (comma-separated list)" if sweep else ""
    p.add_argument("--kernel", required=True, help=f"one of {', '.join(KERNELS)}{many}")
    p.add_argument("--variant", default="BASELINE,SU", help="BASELINE, SU or both, comma-separated")
    p.add_argument("--fmt", default="FP64", help=f"number format{many}")
    if sweep:
        p.add_argument("--matrix", action="append", default=[], help="Matrix Market file (repeatable)")
        p.add_argument("--random", action="append", default=[], help="rows,cols,density (repeatable)")
        p.add_argument("--seed", default="0", help="seed(s), comma-separated")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    else:
        src = p.add_mutually_exclusive_group()
        src.add_argument("--matrix", help="Matrix Market file")
        src.add_argument("--random", help="rows,cols,density")
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-cols", type=int, default=16, help="columns of the dense B (spmm)")
    p.add_argument("--right-density", type=float, default=0.01, help="density of B (spmspm)")
    p.add_argument("--stencil", default="j3d27pt", help=f"one of {', '.join(STENCIL_SUITE)}")
    p.add_argument("--grid", default="16,16,16", help="stencil grid Z,Y,X")
    p.add_argument("--iters", type=int, default=100_000, help="peak_fma loop length")
    p.add_argument("--tile-rows", type=int, help="row tile height (spmm, spmspm)")
    p.add_argument("--tile-z", type=int, help="interior planes per tile (stencil)")
    p.add_argument("--scope", default="chip", choices=("chip", "cluster"))
    p.add_argument("--config", help="flat key=value (or JSON) cluster configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"streamsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run one experiment and write a JSON report"), False)
    _common(sub.add_parser("sweep", help="cartesian sweep written as CSV"), True)
    cp = sub.add_parser("compare", help="join baseline/SU records and summarize")
    cp.add_argument("reports", nargs="+")
    cp.add_argument("--out", help="JSON summary path")
    return ap


def _spec_from(args, kernel, variants, fmt, seed, matrix=None, random=None) -> ExperimentSpec:
    return ExperimentSpec(
        kernel=kernel, variants=variants, fmt=fmt, matrix=matrix, random=random, seed=seed,
        n_cols=args.n_cols, right_density=args.right_density, stencil=args.stencil,
        grid=_parse_dims(args.grid), iters=args.iters, tile_rows=args.tile_rows,
        tile_z=args.tile_z, scope=args.scope)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    variants = tuple(v for v in args.variant.split(",") if v)
    random = _parse_random(args.random) if args.random else None
    spec = _spec_from(args, args.kernel, variants, args.fmt, args.seed, args.matrix, random)
    recs = run_records(spec, cfg)
    for r in recs:
        if r["error"]:
            print(f"error: {r['variant']}: {r['error']}", file=sys.stderr)
    doc = {"records": recs,
           "metadata": {"tool": "streamsim", "version": __version__,
                        "created_unix": round(time.time(), 3)}}
    _emit(json.dumps(doc, indent=2, sort_keys=False) + "\n", args.out)
    return _exit_code(recs)


def _sweep_one(job: tuple[ExperimentSpec, ClusterConfig]) -> list[dict]:
    spec, cfg = job
    return run_records(spec, cfg)


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    kernels = [k for k in args.kernel.split(",") if k]
    variants = tuple(v for v in args.variant.split(",") if v)
    fmts = [f for f in args.fmt.split(",") if f]
    seeds = [int(s) for s in args.seed.split(",") if s]
    sources = [("matrix", m) for m in args.matrix] + [("random", _parse_random(r)) for r in args.random]
    jobs = []
    for kernel, fmt, seed in itertools.product(kernels, fmts, seeds):
        srcs = sources if kernel in ("spmm", "spmspm", "sparse_dot") else [(None, None)]
        for kind, src in srcs:
            spec = _spec_from(args, kernel, variants, fmt, seed,
                              src if kind == "matrix" else None, src if kind == "random" else None)
            jobs.append((spec, cfg))
    if len(jobs) * len(variants) >= MAX_SWEEP_RUNS:
        raise ConfigError(f"sweep of {len(jobs) * len(variants)} runs exceeds {MAX_SWEEP_RUNS}")
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    recs = [r for rs in results for r in rs]
    buf = io.StringIO()
    write_csv(recs, buf)
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def compare(records: Sequence[dict]) -> dict:
    groups: dict[tuple, dict[str, dict]] = {}
    for r in records:
        if r.get("error"):
            continue
        key = (r["kernel"], r["operand_id"], r["format"])
        groups.setdefault(key, {})[r["variant"]] = r
    paired = {k for k, g in groups.items() if {"BASELINE", "SU"} <= set(g)}
    if paired and len(paired) != len(groups):
        unmatched = sorted("/".join(k) for k in set(groups) - paired)
        raise ConfigError(f"records without a baseline/SU partner: {', '.join(unmatched)}")
    variants = {v for g in groups.values() for v in g}
    if not paired and len(variants) > 1:
        # both variants present but never for the same kernel/operand/format
        raise ConfigError(f"records do not share kernel/operand keys: "
                          f"{', '.join('/'.join(k) for k in sorted(groups))}")
    rows = []
    for key in sorted(groups):
        g = groups[key]
        best = max(g.values(), key=lambda r: r["cycles"] or 0)
        row = {"kernel": key[0], "operand_id": key[1], "format": key[2],
               "max_fpu_util": max(r["fpu_util"] for r in g.values()),
               "max_comp_util": max(r["comp_util"] for r in g.values()),
               "chip_gflops": max(r["chip_gflops"] for r in g.values()),
               "chip_gcomps": max(r["chip_gcomps"] for r in g.values())}
        if paired:
            row["baseline_cycles"] = g["BASELINE"]["cycles"]
            row["su_cycles"] = g["SU"]["cycles"]
            row["speedup"] = g["BASELINE"]["cycles"] / g["SU"]["cycles"]
        else:
            row["variant"] = best["variant"]
            row["cycles"] = best["cycles"]
        rows.append(row)
    summary = {"rows": rows, "with_speedup": bool(paired)}
    if paired:
        summary["max_speedup"] = max(r["speedup"] for r in rows)
    return summary


def format_table(summary: dict) -> str:
    rows = summary["rows"]
    if not rows:
        return "(no records)\n"
    cols = list(rows[0])
    cells = [[f"{r[c]:.4g}" if isinstance(r[c], float) else str(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    records = []
    for p in args.reports:
        try:
            records += read_records(p)
        except (OSError, json.JSONDecodeError, KeyError) as e:
            raise OperandLoadError(f"cannot read report {p}: {e}") from None
    summary = compare(records)
    sys.stdout.write(format_table(summary))
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare}
    try:
        return handlers[args.command](args)
    except OperandLoadError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, PlanningError, OperandError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
