import json

import numpy as np
import pytest

from ngc.orchestrator import Experiment, ExperimentConfig, run_experiment
from ngc.world import SplitPlan, WorldConfig, make_dataset

TINY_PLAN = SplitPlan(train=24, validation=12, unlabeled=(24, 24), evaluation=16)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("world")
    make_dataset(WorldConfig(height=16, width=16, seed=3), root, TINY_PLAN)
    return root


def tiny_config(dataset, **kw):
    base = dict(
        dataset=str(dataset),
        seed=5,
        hidden=[8],
        grid=4,
        supervised={"epochs": 3, "learning_rate": 3e-3, "weight_decay": 1e-2, "batch_size": 128},
        unsupervised={"epochs": 2, "learning_rate": 1e-3, "weight_decay": 1e-2, "batch_size": 128},
        pixels_per_scene=16,
        unsup_pixels_per_scene=16,
        iterations=2,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def tiny_run(tiny_dataset, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    run_experiment(tiny_config(tiny_dataset), run)
    return run


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def read_json(path):
    return json.loads(open(path).read())


# -- acceptance summary -----------------------------------------------------------

ACCEPTANCE_DETAIL = {}
_ACCEPTANCE_OUTCOME = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_c" not in report.nodeid:
        return
    num = int(report.nodeid.split("::test_c")[1][:2])
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE_OUTCOME[num] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_OUTCOME:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE_OUTCOME):
        status = "PASS" if _ACCEPTANCE_OUTCOME[num] == "passed" else "FAIL"
        title, detail = ACCEPTANCE_DETAIL.get(num, ("", ""))
        terminalreporter.write_line(f"[{status}] #{num:>2} {title}: {detail}")
