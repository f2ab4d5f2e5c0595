import csv
import json
import subprocess
import sys

import pytest

from streamsim import cli
from streamsim.data import CooMatrix, csr_to_coo, gen_random_rows, write_matrix_market
from streamsim.machine import ClusterConfig


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def mats(tmp_path):
    paths = []
    for s in range(5):
        A = gen_random_rows(24, 24, 3, seed=s)
        p = tmp_path / f"m{s}.mtx"
        p.write_text(write_matrix_market(csr_to_coo(A)))
        paths.append(str(p))
    return paths


def records(path):
    return json.loads(open(path).read())["records"]


def test_run_peak_fma(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _, _ = run(["run", "--kernel", "peak_fma", "--variant", "SU", "--iters", "20000",
                      "--out", str(out)], capsys)
    assert code == 0
    (rec,) = records(out)
    assert rec["chip_gflops"] == pytest.approx(768, rel=0.005)
    assert rec["validated"] is True
    for key in ClusterConfig().to_dict():
        assert f"cfg_{key}" in rec
    assert set(cli.RECORD_FIELDS) <= set(rec)


def test_run_identity_spmm(tmp_path, capsys):
    m = tmp_path / "eye.mtx"
    m.write_text(write_matrix_market(CooMatrix(16, 16, [(i, i, 1.0) for i in range(16)])))
    out = tmp_path / "r.json"
    code, _, _ = run(["run", "--kernel", "spmm", "--matrix", str(m), "--n-cols", "4",
                      "--out", str(out)], capsys)
    assert code == 0
    recs = records(out)
    assert [r["variant"] for r in recs] == ["BASELINE", "SU"]
    assert all(r["validated"] and r["speedup"] is not None for r in recs)
    assert recs[0]["operand_id"] == "eye"


@pytest.mark.parametrize("kernel,extra", [
    ("stencil", ["--grid", "6,7,8", "--stencil", "star7pt"]),
    ("spmspm", ["--random", "16,16,0.2", "--right-density", "0.2"]),
    ("sparse_dot", ["--random", "1,64,0.3"]),
    ("spmm", ["--random", "16,16,0.3", "--fmt", "FP8", "--n-cols", "8"]),
])
def test_run_each_kernel(kernel, extra, tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _, err = run(["run", "--kernel", kernel, "--out", str(out)] + extra, capsys)
    assert code == 0, err
    assert all(r["validated"] for r in records(out))


def test_run_validation_failure(tmp_path, capsys, monkeypatch):
    real = cli.golden.spmm_ref

    def broken(A, B):
        C = real(A, B)
        C[2, 1] += 1.0
        return C

    monkeypatch.setattr(cli.golden, "spmm_ref", broken)
    out = tmp_path / "r.json"
    code, _, err = run(["run", "--kernel", "spmm", "--random", "8,8,1.0", "--n-cols", "2",
                        "--out", str(out)], capsys)
    assert code == cli.EXIT_VALIDATION
    assert "first differing element (2, 1)" in err
    assert not any(r["validated"] for r in records(out))


def test_run_planning_error(capsys):
    code, _, err = run(["run", "--kernel", "stencil", "--grid", "6,130,130"], capsys)
    assert code == cli.EXIT_CONFIG
    assert "SPM holds 131072" in err


@pytest.mark.parametrize("argv,code", [
    (["run", "--kernel", "spmm", "--matrix", "/no/such.mtx"], 3),
    (["run", "--kernel", "spmm", "--random", "4,4,0.5", "--set", "bogus=1"], 2),
    (["run", "--kernel", "spmm", "--random", "4,4"], 2),
    (["run", "--kernel", "spmm"], 2),
    (["run", "--kernel", "stencil", "--fmt", "FP16"], 2),
    (["run", "--kernel", "nope"], 2),
    (["run", "--kernel", "spmm", "--random", "4,4,0.5", "--config", "/no/such.cfg"], 3),
    (["frobnicate"], 2),
    (["compare", "/no/such.json"], 3),
])
def test_exit_codes(argv, code, capsys):
    assert run(argv, capsys)[0] == code


def test_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_workers = 4\nfreq_hz = 2e9\n")
    out = tmp_path / "r.json"
    code, _, _ = run(["run", "--kernel", "peak_fma", "--variant", "SU", "--iters", "100",
                      "--config", str(cfg), "--set", "n_chiplets=1", "--out", str(out)], capsys)
    assert code == 0
    (rec,) = records(out)
    assert (rec["cfg_n_workers"], rec["cfg_freq_hz"], rec["cfg_n_chiplets"]) == (4, 2e9, 1)
    assert rec["cfg_spm_bytes"] == 131072


def test_run_is_deterministic_apart_from_metadata(tmp_path, capsys):
    docs = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        run(["run", "--kernel", "spmspm", "--random", "20,20,0.2", "--seed", "3",
             "--out", str(out)], capsys)
        doc = json.loads(out.read_text())
        assert "created_unix" in doc.pop("metadata")
        docs.append(json.dumps(doc))
    assert docs[0] == docs[1]


# ---------------------------------------------------------------------------
# sweep

def sweep_rows(path):
    return list(csv.DictReader(open(path)))


def test_sweep_one_matrix(mats, tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert run(["sweep", "--kernel", "spmm", "--matrix", mats[0], "--n-cols", "4",
                "--out", str(out)], capsys)[0] == 0
    rows = sweep_rows(out)
    assert [r["variant"] for r in rows] == ["BASELINE", "SU"]
    assert float(rows[0]["cycles"]) / float(rows[1]["cycles"]) == pytest.approx(float(rows[1]["speedup"]))


def test_sweep_five_matrices(mats, tmp_path, capsys):
    out = tmp_path / "s.csv"
    argv = ["sweep", "--kernel", "spmm", "--n-cols", "4", "--out", str(out)]
    for m in mats:
        argv += ["--matrix", m]
    assert run(argv, capsys)[0] == 0
    rows = sweep_rows(out)
    assert len(rows) == 10 and not any(r["error"] for r in rows)


def test_sweep_corrupt_matrix(mats, tmp_path, capsys):
    bad = tmp_path / "bad.mtx"
    bad.write_text("%%MatrixMarket matrix coordinate real general\n3 3 2\n1 1 1.0\n")
    out = tmp_path / "s.csv"
    argv = ["sweep", "--kernel", "spmm", "--n-cols", "4", "--out", str(out)]
    for m in mats[:2] + [str(bad)] + mats[2:4]:
        argv += ["--matrix", m]
    assert run(argv, capsys)[0] == 0
    rows = sweep_rows(out)
    errors = [r for r in rows if r["error"]]
    assert len(errors) == 1 and "line 3" in errors[0]["error"]
    assert len(rows) - len(errors) == 8
    assert errors[0]["operand_id"] == "bad"


def test_sweep_byte_identical_and_parallel_safe(mats, tmp_path, capsys):
    outs = []
    for k, jobs in enumerate(("1", "1", "2")):
        out = tmp_path / f"s{k}.csv"
        run(["sweep", "--kernel", "spmm,spmspm", "--matrix", mats[0], "--random", "16,24,0.2",
             "--seed", "0,1", "--n-cols", "4", "--right-density", "0.2", "--jobs", jobs,
             "--out", str(out)], capsys)
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert len(sweep_rows(tmp_path / "s0.csv")) == 2 * 2 * 2 * 2


def test_sweep_bound(capsys):
    argv = ["sweep", "--kernel", "peak_fma", "--seed", ",".join(map(str, range(5001)))]
    assert run(argv, capsys)[0] == cli.EXIT_CONFIG


# ---------------------------------------------------------------------------
# compare

def rec(variant, cycles, kernel="spmm", operand="m0"):
    return {"kernel": kernel, "variant": variant, "operand_id": operand, "format": "FP64",
            "cycles": cycles, "fpu_util": 0.1, "comp_util": 0.0, "chip_gflops": 76.8,
            "chip_gcomps": 0.0, "error": ""}


def write_report(path, recs):
    path.write_text(json.dumps({"records": recs, "metadata": {}}))
    return str(path)


def test_compare_speedup(tmp_path, capsys):
    n = 1000
    a = write_report(tmp_path / "a.json", [rec("BASELINE", 5 * n)])
    b = write_report(tmp_path / "b.json", [rec("SU", n)])
    out = tmp_path / "sum.json"
    code, table, _ = run(["compare", a, b, "--out", str(out)], capsys)
    assert code == 0 and "speedup" in table
    summary = json.loads(out.read_text())
    assert summary["rows"][0]["speedup"] == 5.0 and summary["max_speedup"] == 5.0


def test_compare_single_report(tmp_path, capsys):
    a = write_report(tmp_path / "a.json", [rec("SU", 10), rec("SU", 20, operand="m1")])
    code, table, _ = run(["compare", a], capsys)
    assert code == 0
    assert "speedup" not in table and "m1" in table


def test_compare_mismatched_kernels(tmp_path, capsys):
    a = write_report(tmp_path / "a.json", [rec("BASELINE", 50)])
    b = write_report(tmp_path / "b.json", [rec("SU", 10, kernel="stencil")])
    code, _, err = run(["compare", a, b], capsys)
    assert code == cli.EXIT_CONFIG
    assert "spmm/m0/FP64" in err and "stencil/m0/FP64" in err


def test_compare_unmatched_keys(tmp_path, capsys):
    a = write_report(tmp_path / "a.json", [rec("BASELINE", 50), rec("SU", 10),
                                           rec("SU", 10, operand="lonely")])
    code, _, err = run(["compare", a], capsys)
    assert code == cli.EXIT_CONFIG and "lonely" in err


def test_compare_reads_sweep_csv(mats, tmp_path, capsys):
    out = tmp_path / "s.csv"
    run(["sweep", "--kernel", "spmm", "--matrix", mats[0], "--matrix", mats[1], "--n-cols", "4",
         "--out", str(out)], capsys)
    code, table, _ = run(["compare", str(out)], capsys)
    assert code == 0 and table.count("m") >= 2 and "speedup" in table


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "streamsim.cli", "run", "--kernel", "peak_fma",
                          "--iters", "10", "--variant", "SU"], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["records"][0]["kernel"] == "peak_fma"
