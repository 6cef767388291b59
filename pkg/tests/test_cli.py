import csv
import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from bspce import bench
from bspce.cli import PRESETS, benchmark_cells, load_config, main
from bspce.polybasis import MultiIndexBasis, build_basis, evaluate_design

FAST = ["--set", "sampler.chains=2", "--set", "sampler.iterations=300", "--set", "sampler.warmup=150"]


def small_problem(tmp_path, name="run", degree=2, T=20, extra=()):
    out = tmp_path / name
    return ["--out", str(out), "--set", f"basis.degree={degree}", "--set", f"design.T={T}", *FAST, *extra], out


def header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


def count_rows(path):
    with open(path) as fh:
        return sum(1 for _ in fh) - 1


def test_basis_for_ishigami(tmp_path):
    assert main(["basis", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "basis.json").read_text())
    assert len(doc["multi_indices"]) == 286
    back = MultiIndexBasis.load(tmp_path / "basis.json")
    direct = build_basis(bench.ishigami_problem().moments(10), 10)
    X = bench.ishigami_problem().sample(15, seed=0)
    assert np.array_equal(evaluate_design(back, X), evaluate_design(direct, X))


def test_basis_from_constant_samples_exits_2(tmp_path):
    (tmp_path / "s.csv").write_text("x1,x2\n1.0,3.0\n2.0,3.0\n4.0,3.0\n")
    code = main(["basis", "--out", str(tmp_path), "--set", "basis.degree=1",
                 "--set", f"basis.samples={json.dumps(str(tmp_path / 's.csv'))}"])
    assert code == 2


def test_basis_from_input_families(tmp_path):
    inputs = json.dumps([{"family": "uniform", "a": 0, "b": 2}, {"family": "gaussian", "mean": 1, "sd": 3}])
    assert main(["basis", "--out", str(tmp_path), "--set", "basis.degree=3", "--set", f"basis.inputs={inputs}"]) == 0
    assert MultiIndexBasis.load(tmp_path / "basis.json").M == 10


def test_bad_key_exits_1_with_name(tmp_path, capsys):
    assert main(["fit", "--out", str(tmp_path), "--set", "sampler.chainz=2"]) == 1
    assert "sampler.chainz" in capsys.readouterr().err
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"design": {"T": 10, "colour": "red"}}))
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "design.colour" in capsys.readouterr().err
    assert main(["fit", "--config", str(tmp_path / "missing.json")]) == 1


def test_flat_fit_has_M_plus_two_named_columns(tmp_path):
    args, out = small_problem(tmp_path, extra=["--set", "prior.mode=flat"])
    assert main(["fit", *args]) == 0
    cols = header(out / "draws.csv")
    assert cols[:2] == ["chain", "iteration"]
    named = cols[2:]
    assert named == [f"c_{i}" for i in range(10)] + ["sigma", "lp__"]
    assert len(named) == 10 + 2
    for f in ("diagnostics.json", "sampler_stats.csv", "basis.json", "config.json", "run.log"):
        assert (out / f).exists()


def test_r2d2_fit_row_count(tmp_path):
    out = tmp_path / "r"
    code = main(["fit", "--out", str(out), "--set", "basis.degree=2", "--set", "design.T=30",
                 "--set", "sampler.chains=2", "--set", "sampler.iterations=2000", "--set", "sampler.warmup=1000"])
    assert code == 0
    assert count_rows(out / "draws.csv") == 2000
    diag = json.loads((out / "diagnostics.json").read_text())
    assert "rhat_max" in diag and "divergences" in diag


def test_sampler_failure_exits_3_and_writes_diagnostics(tmp_path):
    args, out = small_problem(tmp_path, extra=["--set", "sampler.init=given", "--set", "sampler.init_point=[0.0]"])
    assert main(["fit", *args]) == 3
    doc = json.loads((out / "diagnostics.json").read_text())
    assert doc["error"]


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    out = root / "ref"
    args = ["--out", str(out), "--set", "basis.degree=4", "--set", "design.T=40", *FAST]
    assert main(["fit", *args]) == 0
    return args, out


@pytest.mark.parametrize("method", ["sobol", "projpred"])
def test_select_gives_26_indices(fitted, method, tmp_path):
    args, out = fitted
    dest = tmp_path / f"{method}.json"
    assert main(["select", *args, "--method", method, "--M-sel", "25", "-o", str(dest)]) == 0
    doc = json.loads(dest.read_text())
    assert len(doc["indices"]) == 26 and doc["indices"][0] == 0
    assert len(doc["degrees"]) == 26


def test_select_rejects_mismatched_basis(fitted, tmp_path):
    args, out = fitted
    assert main(["select", *args, "--set", "basis.degree=3", "-o", str(tmp_path / "x.json")]) == 4


def test_refit_predict_diagnose(fitted, tmp_path, capsys):
    args, out = fitted
    assert main(["select", *args, "--M-sel", "6"]) == 0
    assert main(["refit", *args]) == 0
    cols = header(out / "refit_draws.csv")
    assert sum(c.startswith("c_") for c in cols) == 7
    X = bench.ishigami_problem().sample(5, seed=1)
    inputs = tmp_path / "x.csv"
    np.savetxt(inputs, X, delimiter=",", header="w1,w2,w3", comments="")
    pred = tmp_path / "p.csv"
    assert main(["predict", *args, "--draws", str(out / "refit_draws.csv"), "--inputs", str(inputs),
                 "-o", str(pred)]) == 0
    rows = list(csv.reader(open(pred)))
    assert rows[0] == ["point", "mean", "q2.5", "q97.5"] and len(rows) == 6
    assert all(float(r[2]) <= float(r[1]) <= float(r[3]) for r in rows[1:])
    capsys.readouterr()
    assert main(["diagnose", *args]) == 0
    assert "rhat_max=" in capsys.readouterr().out
    assert json.loads((out / "diagnose.json").read_text())["converged"] in (True, False)


def test_predict_mismatch_exits_4(fitted, tmp_path):
    args, out = fitted
    inputs = tmp_path / "x.csv"
    inputs.write_text("a,b\n0.1,0.2\n")
    assert main(["predict", *args, "--inputs", str(inputs)]) == 4
    other = tmp_path / "b.json"
    build_basis(bench.ishigami_problem().moments(2), 2).save(other)
    inputs.write_text("a,b,c\n0.1,0.2,0.3\n")
    assert main(["predict", *args, "--basis", str(other), "--inputs", str(inputs)]) == 4


def outputs(path):
    skip = {"run.log", "timings.csv"}
    return {f: (path / f).read_bytes() for f in sorted(os.listdir(path)) if f not in skip}


def test_fit_is_idempotent(tmp_path):
    a, out_a = small_problem(tmp_path, "a")
    b, out_b = small_problem(tmp_path, "b")
    assert main(["fit", *a]) == 0 and main(["fit", *b]) == 0
    fa, fb = outputs(out_a), outputs(out_b)
    fa.pop("config.json"), fb.pop("config.json")  # differ only in the output path
    assert fa == fb
    assert main(["fit", *a]) == 0
    again = outputs(out_a)
    again.pop("config.json")
    assert again == fa


def test_signum_benchmark_rows(tmp_path):
    out = tmp_path / "sig"
    assert main(["benchmark", "--preset", "signum", "--out", str(out), *FAST,
                 "--set", 'benchmark.designs=["sobol-sequence"]', "--workers", "2"]) == 0
    with open(out / "benchmark.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted({int(r["degree"]) for r in rows}) == list(range(1, 11))
    for d in range(1, 11):
        got = {r["method"] for r in rows if int(r["degree"]) == d}
        assert got == {"reference", "flat", "exact"}
        assert all(int(r["T"]) == d + 1 for r in rows if int(r["degree"]) == d)
    assert "fit_seconds" not in rows[0]
    assert count_rows(out / "timings.csv") == len(rows)
    assert (out / "benchmark_long.csv").exists()


def test_benchmark_parallel_matches_serial(tmp_path):
    base = ["--preset", "signum", *FAST, "--set", "benchmark.degrees=[2,3]"]
    assert main(["benchmark", *base, "--out", str(tmp_path / "s"), "--workers", "1"]) == 0
    assert main(["benchmark", *base, "--out", str(tmp_path / "p"), "--workers", "3"]) == 0
    a, b = outputs(tmp_path / "s"), outputs(tmp_path / "p")
    a.pop("config.json"), b.pop("config.json")
    assert a == b


def test_presets_and_cells():
    cfg = load_config(preset="ishigami-noise")
    cells = benchmark_cells(cfg)
    assert len(cells) == 8 * 3 * 10
    assert {c["noise_sd"] for c in cells} == {0.1, 0.3, 0.5}
    cfg = load_config(preset="signum")
    assert [c["design"]["T"] for c in benchmark_cells(cfg)][:10] == list(range(2, 12))
    assert set(PRESETS) >= {"ishigami", "sobol-g", "signum"}


def test_override_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"design": {"T": 50}, "sampler": {"chains": 3}}))
    cfg = load_config(str(path), ["design.T=60"])
    assert cfg["design"]["T"] == 60 and cfg["sampler"]["chains"] == 3
    assert cfg["design"]["kind"] == "sobol-sequence"


@pytest.mark.skipif(shutil.which("bspce") is None, reason="console script not installed")
def test_console_script(tmp_path):
    r = subprocess.run(["bspce", "basis", "--out", str(tmp_path), "--set", "basis.degree=2"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    r = subprocess.run([sys.executable, "-m", "bspce.cli", "fit", "--set", "nope.x=1"], capture_output=True, text=True)
    assert r.returncode == 1
