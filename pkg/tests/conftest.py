"""Shared fixtures and the acceptance summary printed at the end of a run."""

import time

import pytest

from exposure_aae import dataprep as dp
from exposure_aae.synthgen import GeneratorConfig, generate_cohort
from exposure_aae.training import TrainConfig, make_train_data, train

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.fixture
def metric(request):
    """Attach ``name=value`` measurements to the acceptance summary line."""
    def record(name, value):
        request.node.user_properties.append((name, value))
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False})
    if report.when == "call":
        entry["ran"] = True
        entry["metrics"] = list(item.user_properties)
    if report.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        shown = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in entry.get("metrics", []))
        tr.write_line(f"criterion {number:2d} {status}  {entry['title']}" + (f"  [{shown}]" if shown else ""))


# -- the seeded acceptance cohort and the model trained on it -----------------

@pytest.fixture(scope="session")
def cohort():
    """5 participants x 14 days, hourly, seed 0."""
    config = GeneratorConfig(seed=0)
    raw, truth = generate_cohort(config)
    return config, raw, truth, dp.prepare(raw)


@pytest.fixture(scope="session")
def trained(cohort):
    """Default 40-epoch training run; returns (params, report, wall seconds)."""
    _, _, _, prep = cohort
    data = make_train_data(prep.part("train"), prep.part("validation"))
    t0 = time.perf_counter()
    params, report = train(data, TrainConfig(seed=0), scaler=prep.scaler)
    return params, report, time.perf_counter() - t0
