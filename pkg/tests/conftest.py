import time

import numpy as np
import pytest

from oran_steer.config import ScenarioConfig
from oran_steer.harness.experiment import evaluate_detection, run_scenario, scenario_configs


def small_config(**blocks):
    """Six-cell default topology with fewer UEs and iterations for fast tests."""
    base = {"topology": {"n_ues": 20}, "iterations": 60}
    for k, v in blocks.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k] = {**base[k], **v}
        else:
            base[k] = v
    return ScenarioConfig().replace(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance criteria record their outcome here; the terminal summary prints one line each.
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} | {detail}")


# Default-scenario runs and detection evaluation, shared by the slow end-to-end tests.


@pytest.fixture(scope="session")
def default_config():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def runs(default_config):
    cfgs = scenario_configs(default_config)
    t0 = time.perf_counter()
    out = {"benign": run_scenario(cfgs["benign"]), "sas": run_scenario(cfgs["sas"])}
    out["sas_pair_seconds"] = time.perf_counter() - t0
    out["mas"] = run_scenario(cfgs["mas"])
    return out


@pytest.fixture(scope="session")
def report(runs, default_config):
    scen = {k: runs[k] for k in ("benign", "sas", "mas")}
    return evaluate_detection(scen, default_config, segments=(1, 4))
