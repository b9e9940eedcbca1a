import numpy as np
import pytest

from activecls import kernels

_VERDICTS = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training or evaluation runs")
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _VERDICTS.append((mark.args[0], status, detail or item.name))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _VERDICTS:
        terminalreporter.write_line(f"{status:4s}  {name}  ({detail})")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=kernels.available_backends())
def kern(request):
    return kernels.load_backend(request.param)
