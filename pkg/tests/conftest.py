from __future__ import annotations

import numpy as np
import pytest

from srocboot.data import Dataset, Study2x2, to_outcomes
from srocboot.reml import BivariateParams
from srocboot.simulate import SimScenario, simulate_dataset
from srocboot.bootstrap import BootstrapConfig


def make_dataset(n_studies=12, seed=0, params=(1.0, -1.5, 0.6, 0.5, -0.3), n_range=(40, 160), prefix="s"):
    """Synthetic count data with known generating parameters."""
    sc = SimScenario(true_params=BivariateParams(*params), n_studies=n_studies, n_a=n_range, n_b=n_range,
                     replications=1, bootstrap=BootstrapConfig(b=1000))
    d = simulate_dataset(sc, np.random.default_rng(seed))
    return Dataset(tuple(Study2x2(f"{prefix}{i + 1}", s.tp, s.fp, s.fn, s.tn, s.test_group)
                         for i, s in enumerate(d.studies)), name="synthetic")


@pytest.fixture
def synthetic():
    return make_dataset()


@pytest.fixture
def synthetic_outcomes(synthetic):
    return to_outcomes(synthetic)


def small_config(**kw):
    kw.setdefault("b", 200)
    kw.setdefault("seed", 11)
    return BootstrapConfig(enforce_min_b=False, **kw)


# --------------------------------------------------------------------------- acceptance report

_criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    done = report.when == "call" or (report.when == "setup" and not report.passed)
    if done:
        measured = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        if report.skipped:
            reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
            status, detail = "SKIP", reason.removeprefix("Skipped: ")
        else:
            status, detail = ("PASS" if report.passed else "FAIL"), measured
        _criteria.append((marker.args[0], status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _criteria:
        line = f"{status:<4}  {name}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
