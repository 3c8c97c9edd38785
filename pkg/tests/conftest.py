import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    # run acceptance criteria in their numbered order
    def key(item):
        m = item.get_closest_marker("criterion")
        return (1, m.args[0]) if m else (0, 0)

    items.sort(key=key)


_OUTCOMES = {}


def pytest_runtest_logreport(report):
    # keep the first phase that did not pass, else the call phase
    prev = _OUTCOMES.get(report.nodeid)
    if (prev is None or prev.outcome == "passed") and (report.when == "call" or report.outcome != "passed"):
        _OUTCOMES[report.nodeid] = report


def pytest_terminal_summary(terminalreporter, config):
    lines = []
    for item in getattr(config, "_criterion_items", []):
        rep = _OUTCOMES.get(item.nodeid)
        if rep is None:
            continue
        number, title = item.get_closest_marker("criterion").args
        status = {"passed": "PASS", "skipped": "SKIP"}.get(rep.outcome, "FAIL")
        detail = "; ".join(f"{k}={v}" for k, v in rep.user_properties)
        lines.append(f"criterion {number} {status}  {title}" + (f"  [{detail}]" if detail else ""))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def pytest_collection_finish(session):
    session.config._criterion_items = [i for i in session.items if i.get_closest_marker("criterion")]
