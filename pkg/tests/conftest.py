import numpy as np
import pytest

_acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        n, text = mark.args
        _acceptance.append((n, text, "PASS" if rep.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n, text, status in sorted(_acceptance):
        terminalreporter.write_line(f"{status} criterion {n}: {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
