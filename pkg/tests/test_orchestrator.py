import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_config
from ngc import metrics as M
from ngc.graph import GraphError, NodeSpec, consensus_for
from ngc.orchestrator import (
    ConfigError,
    Experiment,
    ExperimentConfig,
    IterationReport,
    StageFailed,
    derive_seed,
    greedy_select,
    hygiene_violations,
    run_experiment,
)
from ngc.world import read_manifest

DEPTH = NodeSpec("depth", "Depth", "continuous", 1, "meters")
SEG = NodeSpec("seg", "Seg", "categorical", 3, "class")


def exhaustive_best_prefix(node, cands, gt, direct):
    """Independent oracle: rank by single-path metric, score every prefix, keep the best."""
    metric = M.primary_metric(node)
    single = {k: M.compute(node, metric, p, gt) for k, p in cands}
    keys = sorted(single, key=lambda k: (single[k] if M.POLARITY[metric] == M.LOWER else -single[k], k))
    if direct is not None:
        keys.remove(direct)
        keys.insert(0, direct)
    preds = dict(cands)
    best_len, best = None, None
    for n in range(1, len(keys) + 1):
        v = M.compute(node, metric, consensus_for(node, [preds[k] for k in keys[:n]]).label, gt)
        if best is None or M.better(metric, v, best):
            best_len, best = n, v
    return keys[:best_len]


def test_single_candidate():
    gt = np.zeros((1, 2, 2, 1))
    sel = greedy_select(DEPTH, [(("a",), gt + 1)], gt)
    assert sel.selected == 1 and sel.prefix_metrics == [1.0]


def test_degrading_candidate_stops():
    gt = np.zeros((1, 1, 4, 1))
    good = gt + 0.1
    bad = gt + 5.0
    worse = gt + 9.0
    cands = [(("p1",), good), (("p2",), bad), (("p3",), worse)]
    for stop in ("best-prefix", "first-non-improvement"):
        sel = greedy_select(DEPTH, cands, gt, stop=stop)
        assert [p.edges for p in sel.selected_paths] == [("p1",)]
    assert len(greedy_select(DEPTH, cands, gt, stop="first-non-improvement").prefix_metrics) == 2


def test_direct_path_goes_first():
    gt = np.zeros((1, 1, 3, 1))
    sel = greedy_select(DEPTH, [(("d",), gt + 2), (("x",), gt + 1)], gt, direct=("d",))
    assert sel.ranked[0][0] == ("d",)


@given(st.integers(0, 2**31), st.integers(1, 5), st.booleans(), st.booleans())
@settings(max_examples=60, deadline=None)
def test_greedy_equals_exhaustive(seed, n, categorical, with_direct):
    rng = np.random.default_rng(seed)
    node = SEG if categorical else DEPTH
    if categorical:
        gt = rng.integers(0, 3, (2, 4, 4))
        cands = [((f"p{i}",), np.where(rng.random(gt.shape) < rng.uniform(0.3, 0.9), gt, rng.integers(0, 3, gt.shape)))
                 for i in range(n)]
    else:
        gt = rng.normal(size=(2, 4, 4, 1))
        cands = [((f"p{i}",), gt + rng.normal(scale=rng.uniform(0.1, 2), size=gt.shape)) for i in range(n)]
    direct = ("p0",) if with_direct else None
    sel = greedy_select(node, cands, gt, direct)
    assert [p.edges for p in sel.selected_paths] == exhaustive_best_prefix(node, cands, gt, direct)
    # enumeration order does not matter
    again = greedy_select(node, cands[::-1], gt, direct)
    assert again.selected_paths == sel.selected_paths


def test_iteration_report_reduction():
    r = IterationReport(1, {}, {}, {"a": 2.0, "b": 0.0}, {"a": 0.5, "b": 0.0})
    assert r.reduction == {"a": 75.0, "b": None}
    assert "wall_time" not in json.dumps(r.to_json())


def test_config_validation_and_roundtrip(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig(dataset="x", greedy_stop="sometimes")
    with pytest.raises(ConfigError):
        ExperimentConfig(dataset="x", supervised={"epochs": 0})
    with pytest.raises(ConfigError):
        ExperimentConfig(dataset="x", patch=4)
    cfg = ExperimentConfig(dataset="d", seed=3, tau=0.5)
    cfg.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg
    (tmp_path / "bad.json").write_text('{"dataset": "d", "nope": 1}')
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")


def test_derive_seed_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3) != derive_seed(1, 2, 4)


# -- runs on the tiny world ------------------------------------------------------


def test_run_layout(tiny_run):
    for name in ["config.json", "nodes.json", "topology.json", "topology_gen1.json", "topology_gen2.json", "audit.log"]:
        assert (tiny_run / name).exists(), name
    assert len(list((tiny_run / "checkpoints" / "gen0").glob("*.ngcm"))) == 23
    reports = tiny_run / "reports"
    for name in ["pretrain.json", "greedy.json", "iteration_1.json", "iteration_2.json", "evaluation.json",
                 "metrics.csv", "summary.json", "summary.txt"]:
        assert (reports / name).exists(), name
    header = (reports / "metrics.csv").read_text().splitlines()[0]
    assert header == "iteration,node,edge,metric,value"


def test_greedy_report_consistent(tiny_run):
    sel = json.loads((tiny_run / "reports" / "greedy.json").read_text())
    topo = json.loads((tiny_run / "topology.json").read_text())
    for t, s in sel.items():
        assert s["ranked"][0]["path"] == [f"rgb->{t}"]
        assert topo["ensembles"][t] == [r["path"] for r in s["ranked"][: s["selected"]]]


def test_iteration_reports(tiny_run):
    for k in (1, 2):
        rep = json.loads((tiny_run / "reports" / f"iteration_{k}.json").read_text())
        assert rep["iteration"] == k
        assert set(rep["edge_metrics_before"]) == set(rep["edge_metrics_after"])
        for n, pct in rep["dispersion_reduction_pct"].items():
            b, a = rep["dispersion_before"][n], rep["dispersion_after"][n]
            assert pct == pytest.approx(100 * (1 - a / b))


def test_hygiene(tiny_run, tiny_dataset):
    man = read_manifest(tiny_dataset)
    assert hygiene_violations(tiny_run / "audit.log", man) == []
    usages = {line.rsplit(" ", 1)[0] for line in (tiny_run / "audit.log").read_text().splitlines()}
    assert {"train:supervised", "validate", "pseudo-label:1", "pseudo-label:2", "evaluate"} <= usages
    # a poisoned log is caught
    bad = tiny_run.parent / "poisoned.log"
    bad.write_text((tiny_run / "audit.log").read_text() + f"train:supervised {man['splits']['evaluation']['scene_ids'][0]}\n")
    assert len(hygiene_violations(bad, man)) == 1


def test_pretrain_beats_mean_baseline(tiny_dataset, tmp_path):
    from ngc.world import Dataset

    cfg = tiny_config(tiny_dataset, edges=[[["rgb"], "depth"]], hidden=[16],
                      supervised={"epochs": 40, "learning_rate": 3e-3, "batch_size": 64})
    pre = Experiment(cfg, tmp_path / "base").pretrain()
    ds = Dataset(tiny_dataset)
    tr = ds.load("train", ["depth"], "test")["depth"]
    va = ds.load("validation", ["depth"], "test")["depth"]
    baseline = float(np.mean(np.abs(va - tr.mean())))
    assert pre["rgb->depth"]["validation"]["l1"] < baseline


def test_resume_is_noop(tiny_run, tiny_dataset):
    before = {p: p.stat().st_mtime_ns for p in tiny_run.rglob("*") if p.is_file() and p.name not in ("audit.log", ".lock")}
    run_experiment(tiny_config(tiny_dataset), tiny_run)
    after = {p: p.stat().st_mtime_ns for p in before}
    assert before == after


def test_rerun_bit_identical(tiny_run, tiny_dataset, tmp_path):
    run_experiment(tiny_config(tiny_dataset), tmp_path / "again")
    for f in sorted((tiny_run / "reports").iterdir()):
        if f.name.startswith("timing"):
            continue
        assert (tmp_path / "again" / "reports" / f.name).read_bytes() == f.read_bytes(), f.name
    for f in (tiny_run / "checkpoints").rglob("*.ngcm"):
        assert (tmp_path / "again" / f.relative_to(tiny_run)).read_bytes() == f.read_bytes()


def test_thread_count_does_not_change_results(tiny_run, tiny_dataset, tmp_path, monkeypatch):
    monkeypatch.setenv("NGC_THREADS", "4")
    cfg = tiny_config(tiny_dataset, iterations=1)
    run_experiment(cfg, tmp_path / "threads", iterations=1)
    for f in (tiny_run / "checkpoints" / "gen1").glob("*.ngcm"):
        assert (tmp_path / "threads" / "checkpoints" / "gen1" / f.name).read_bytes() == f.read_bytes()


def test_config_mismatch_refused(tiny_run, tiny_dataset):
    with pytest.raises(ConfigError):
        Experiment(tiny_config(tiny_dataset, seed=99), tiny_run)


def test_iterate_needs_topology(tiny_dataset, tmp_path):
    exp = Experiment(tiny_config(tiny_dataset), tmp_path / "r")
    with pytest.raises(GraphError, match="graph topology missing"):
        exp.iterate(1)


def test_no_fresh_unlabeled_split(tiny_run, tiny_dataset):
    exp = Experiment(tiny_config(tiny_dataset), tiny_run)
    with pytest.raises((ConfigError, GraphError)):
        exp.iterate(3)


def test_zero_iterations(tiny_dataset, tmp_path):
    res = run_experiment(tiny_config(tiny_dataset, iterations=0, supervised={"epochs": 1}), tmp_path / "z")
    ev = res["evaluate"]
    assert ev["generations"] == [0]
    assert ev["columns"] == [{"iteration": 0, "model": "edge"}]


def test_stage_failure_names_stage(tiny_dataset, tmp_path):
    cfg = tiny_config(tiny_dataset, edges=[[["rgb"], "depth"], [["nowhere"], "depth"]])
    with pytest.raises(StageFailed) as e:
        run_experiment(cfg, tmp_path / "f")
    assert e.value.stage == "pretrain" and e.value.seed == cfg.seed


def test_agreeing_ensemble_is_fixed_point(tiny_dataset, tmp_path):
    """Only direct edges: every ensemble has one path, pseudo-labels equal the edge's own output."""
    edges = [[["rgb"], t] for t in ("depth", "semseg")]
    cfg = tiny_config(tiny_dataset, edges=edges, iterations=1, unsupervised={"epochs": 2, "learning_rate": 1e-4})
    run_experiment(cfg, tmp_path / "fp")
    rep = json.loads((tmp_path / "fp" / "reports" / "iteration_1.json").read_text())
    for e, before in rep["edge_metrics_before"].items():
        assert rep["edge_metrics_after"][e] == pytest.approx(before, rel=0.01)
    assert rep["dispersion_before"] == {}


def test_sequential_and_flags_run(tiny_dataset, tmp_path):
    cfg = tiny_config(tiny_dataset, iterations=1, sequential=True, mix_labeled=True, consensus_intermediates=True,
                      tau=0.5, alpha=0.6, supervised={"epochs": 1}, unsupervised={"epochs": 1})
    run_experiment(cfg, tmp_path / "seq")
    assert (tmp_path / "seq" / "reports" / "summary.json").exists()
