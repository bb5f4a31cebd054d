import csv
import io
import json
import re
from pathlib import Path

import pytest

from ngc import theory as T
from ngc.cli import main
from ngc.report import fmt, render_json, render_text, summary_from_evaluation

FIXTURE = Path(__file__).parent / "fixtures" / "reference_table.json"


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_help(capsys):
    code, out, _ = run_cli(capsys, "--help")
    assert code == 0 and "sim-ensemble" in out


def test_unknown_flag(capsys):
    code, _, err = run_cli(capsys, "sim-ensemble", "--bogus")
    assert code == 1 and "usage" in err


def test_sim_ensemble_row(capsys):
    code, out, _ = run_cli(capsys, "sim-ensemble", "--p", "0.6", "--classes", "100", "--paths", "15",
                           "--trials", "10000", "--seed", "42")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == T.CSV_HEADER
    expect = T.simulate_ensemble(T.EnsembleSimConfig(0.6, 100, 15, 10000, 42))
    assert float(rows[0]["analytic_pe_plus"]) == pytest.approx(T.pe_plus(0.6, 100), rel=1e-5)
    assert float(rows[0]["empirical_acc"]) == pytest.approx(expect.accuracy, rel=1e-5)
    assert float(rows[0]["bound_mu2"]) == pytest.approx(expect.bound_mu2, rel=1e-5)


def test_sim_domain_error(capsys):
    code, _, err = run_cli(capsys, "sim-ensemble", "--p", "1.5", "--classes", "10", "--paths", "3")
    assert code == 1 and "p must be" in err


def test_sim_generations_and_classes(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "sim-generations", "--p", "0.6", "--classes", "100", "--paths", "5", "15",
                           "--generations", "3", "--trials", "2000")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 6 and rows[0]["generation"] == "0"
    code, _, _ = run_cli(capsys, "sim-classes", "--p", "0.6", "--paths", "15", "--trials", "2000",
                         "--output", str(tmp_path / "c.csv"))
    assert code == 0
    assert [r["C"] for r in csv.DictReader(open(tmp_path / "c.csv"))] == ["10", "100", "1000"]


def test_iterate_without_graph(capsys, tiny_dataset, tmp_path):
    code, _, err = run_cli(capsys, "iterate", "--round", "1", "--run", str(tmp_path / "r"), "--data", str(tiny_dataset))
    assert code == 1 and "graph topology missing" in err


def test_run_commands_need_config(capsys, tmp_path):
    code, _, err = run_cli(capsys, "pretrain", "--run", str(tmp_path / "r"))
    assert code == 1 and "config" in err


def test_gen_world_refuses_overwrite(capsys, tmp_path):
    args = ["gen-world", "--out", str(tmp_path / "w"), "--size", "8", "8", "--train", "2", "--validation", "2",
            "--unlabeled", "2", "--evaluation", "2"]
    assert run_cli(capsys, *args)[0] == 0
    assert run_cli(capsys, *args)[0] == 1


def parse_numbers(line):
    return [None if c == "-" else float(c) for c in re.split(r"\s{2,}", line.strip())[2:]]


def test_report_renders_reference_table(capsys):
    code, out, _ = run_cli(capsys, "report", str(FIXTURE))
    assert code == 0
    depth = next(line for line in out.splitlines() if line.startswith("Depth") and "L1" in line)
    assert parse_numbers(depth) == pytest.approx([4.9844, 3.4867, 4.2802, 3.2994, 3.9508], rel=1e-9)
    header = out.splitlines()[0]
    assert header.split()[2:] == ["it0", "EdgeNet", "it1", "NGC", "it1", "Distil.", "it2", "NGC", "it2", "Distil."]


def test_json_and_text_agree():
    s = json.loads(FIXTURE.read_text())
    text_rows = render_text(s).splitlines()[2:]
    js = json.loads(render_json(s))
    for line, row in zip(text_rows, js["rows"]):
        nums = parse_numbers(line)
        assert len(nums) == len(row["values"])
        for a, b in zip(nums, row["values"]):
            assert (a is None and b is None) or a == pytest.approx(b, rel=1e-12)


def test_six_significant_digits():
    assert fmt(3.14159265) == "3.14159" and fmt(None) == "-" and fmt(1234567.0) == "1.23457e+06"


def test_one_iteration_layout():
    rows = [{"iteration": 0, "node": "depth", "edge": "rgb->depth", "metric": "l1", "value": 2.0},
            {"iteration": 1, "node": "depth", "edge": "ngc", "metric": "l1", "value": 1.0},
            {"iteration": 1, "node": "depth", "edge": "rgb->depth", "metric": "l1", "value": 1.5}]
    cols = [{"iteration": 0, "model": "edge"}, {"iteration": 1, "model": "ngc"}, {"iteration": 1, "model": "distil"}]
    s = summary_from_evaluation({"columns": cols, "rows": rows, "nodes": {"depth": {"name": "Depth", "units": "meters"}}})
    assert s["rows"] == [{"node": "depth", "representation": "Depth", "metric": "l1", "label": "L1 (meters)",
                          "values": [2.0, 1.0, 1.5]}]


def test_report_on_run_dir(capsys, tiny_run, tmp_path):
    code, out, _ = run_cli(capsys, "report", str(tiny_run), "--format", "json")
    assert code == 0
    assert json.loads(out)["columns"][0] == {"iteration": 0, "model": "edge"}
    code, _, err = run_cli(capsys, "report", str(tmp_path))
    assert code == 1 and "no iteration reports" in err


def test_pipeline_commands(capsys, tiny_dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": str(tiny_dataset), "hidden": [4], "grid": 4, "iterations": 1,
                               "supervised": {"epochs": 1}, "unsupervised": {"epochs": 1}}))
    run = str(tmp_path / "run")
    assert run_cli(capsys, "pretrain", "--run", run, "--config", str(cfg))[0] == 0
    assert run_cli(capsys, "build-graph", "--run", run)[0] == 0
    assert run_cli(capsys, "iterate", "--round", "2", "--run", run)[0] == 1
    assert run_cli(capsys, "iterate", "--round", "1", "--run", run)[0] == 0
    code, out, _ = run_cli(capsys, "evaluate", "--run", run)
    assert code == 0 and "it1 Distil." in out
