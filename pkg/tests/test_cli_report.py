import csv
import json

import numpy as np
import pytest

from cloudbench.cli import main
from cloudbench.core_model import dataset_load
from cloudbench.report import (
    ReportError,
    read_ecdf_csv,
    read_matrix_csv,
    read_ratio_csv,
    sha256_file,
)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    steps = [
        ["simulate", "--preset", "table3", "--days", "1", "--samples-per-hour", "0.25",
         "--per-second", "120", "--out", str(d / "ps.jsonl"), "--seed", "3"],
        ["calibrate", "--in", str(d / "ps.jsonl"), "--out-dir", str(d / "cal"), "--window", "120"],
        ["simulate", "--preset", "excursions", "--days", "5", "--out", str(d / "bw.jsonl"), "--seed", "3"],
        ["correlate", "--in", str(d / "bw.jsonl"), "--out-dir", str(d / "cor")],
        ["report", "--in", str(d / "bw.jsonl"), "--calibrate-dir", str(d / "cal"),
         "--correlate-dir", str(d / "cor"), "--out-dir", str(d / "rep")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    return d


def test_report_bundle(pipeline):
    rep = pipeline / "rep"
    manifest = json.loads((rep / "manifest.json").read_text())
    names = {f["name"] for f in manifest["files"]}
    stems = ("cv_ecdf", "error_ratio", "path_mean_heatmap", "rho_ecdf", "mean_rho_matrix")
    assert names == {f"{s}.{ext}" for s in stems for ext in ("csv", "svg")}
    for f in manifest["files"]:
        assert sha256_file(rep / f["name"]) == f["sha256"]
    for s in stems:
        assert (rep / f"{s}.svg").read_text().startswith("<svg")


def test_report_tables(pipeline):
    rep = pipeline / "rep"
    ids, grid = read_matrix_csv(rep / "path_mean_heatmap.csv")
    assert len(ids) == 18 and grid.shape == (19, 19)
    assert np.all(np.isnan(np.diag(grid[:18, :18])))
    ids, grid = read_matrix_csv(rep / "mean_rho_matrix.csv")
    assert grid.shape == (19, 19)
    xs, ps = read_ecdf_csv(rep / "rho_ecdf.csv")
    assert ps[-1] == pytest.approx(1.0) and np.all(np.diff(xs) >= 0)
    # every coefficient enters twice (doubled convention), so each step is 2/93330
    assert ps[0] == pytest.approx(2 / 93330, abs=1e-6) and len(xs) <= 46665
    pairs, M = read_ratio_csv(rep / "error_ratio.csv")
    assert len(pairs) == 306 and M.shape[0] == 306
    xs, ps = read_ecdf_csv(rep / "cv_ecdf.csv")
    assert len(xs) == 306


def test_report_rerun_is_byte_identical(pipeline, tmp_path):
    d = pipeline
    argv = ["report", "--in", str(d / "bw.jsonl"), "--calibrate-dir", str(d / "cal"),
            "--correlate-dir", str(d / "cor"), "--out-dir", str(tmp_path / "again")]
    assert main(argv) == 0
    assert (tmp_path / "again" / "manifest.json").read_bytes() == (d / "rep" / "manifest.json").read_bytes()


def test_correlate_outputs(pipeline):
    with open(pipeline / "cor" / "triples.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4896
    rhos = np.array([float(r["rho"]) for r in rows])
    assert np.all(np.abs(rhos) <= 1)


def test_anova_subcommands(pipeline, tmp_path, capsys):
    assert main(["anova", "bandwidth", "--in", str(pipeline / "bw.jsonl"), "--out-dir", str(tmp_path / "bw")]) == 0
    assert "adjusted R2" in capsys.readouterr().out
    with open(tmp_path / "bw" / "anova_table.csv", newline="") as fh:
        rows = {r["term"]: r for r in csv.DictReader(fh)}
    assert int(rows["Time"]["df"]) == 23 and int(rows["Weekday"]["df"]) == 4  # five days cover five weekdays
    assert int(rows["Total"]["df"]) == 36720
    with open(tmp_path / "bw" / "parameters.csv", newline="") as fh:
        params = list(csv.DictReader(fh))
    assert params[0]["term"] == "Intercept"
    assert main(["anova", "correlation", "--in", str(pipeline / "cor" / "triples.csv"),
                 "--out-dir", str(tmp_path / "rho")]) == 0
    assert (tmp_path / "rho" / "anova_table.csv").exists()


def test_decompose_subcommand(tmp_path):
    ds = tmp_path / "d.jsonl"
    assert main(["simulate", "--preset", "excursions", "--days", "2", "--samples-per-hour", "1",
                 "--out", str(ds), "--seed", "1"]) == 0
    out = tmp_path / "dec.jsonl"
    assert main(["decompose", "--in", str(ds), "--out", str(out)]) == 0
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(lines) == 306
    assert {"src", "dst"} <= set(lines[0])


def test_simulate_writes_truth(tmp_path):
    out = tmp_path / "x.jsonl"
    assert main(["simulate", "--preset", "null", "--days", "1", "--out", str(out)]) == 0
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert len(truth["paths"]) == 306
    assert len(dataset_load(out).samples) == 306 * 24


def test_probe_run_simulated(tmp_path, capsys):
    from cloudbench.simulate import save_scenario, scenario_table3

    cfg = tmp_path / "probe.json"
    cfg.write_text(json.dumps({"endpoints": {"virginia_c1": "a:1", "ireland_c1": "b:1", "sydney_c3": "c:1"},
                               "ticks": 2}))
    save_scenario(scenario_table3(), tmp_path / "scen.json")
    out = tmp_path / "probe.jsonl"
    rc = main(["probe", "run", "--config", str(cfg), "--out", str(out), "--simulated", str(tmp_path / "scen.json")])
    assert rc == 0
    assert len(dataset_load(out).samples) == 12


def test_lilliefors_table_subcommand(tmp_path):
    out = tmp_path / "crit.csv"
    assert main(["lilliefors-table", "--out", str(out), "--reps", "2000", "--ns", "30,60"]) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 3


def test_usage_and_data_errors(tmp_path, capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["calibrate"]) == 1
    assert main(["calibrate", "--in", str(tmp_path / "missing.jsonl")]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert main(["correlate", "--in", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert main(["anova", "bandwidth", "--in", str(bad), "--reference", "nonsense"]) in (1, 2)
    assert main(["--version"]) == 0


def test_report_rejects_malformed_input(tmp_path):
    f = tmp_path / "m.csv"
    f.write_text("a,b\n1,2\n")
    with pytest.raises(ReportError):
        read_matrix_csv(f)
