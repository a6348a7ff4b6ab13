import numpy as np
import pytest

from gatednet import kernels

_ACCEPTANCE: list[tuple[int, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        number, title = marker.args
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _ACCEPTANCE.append((number, title, status))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    # parametrized criteria fold into one line: any FAIL wins, then SKIP
    merged: dict[int, tuple[str, list[str]]] = {}
    for number, title, status in _ACCEPTANCE:
        merged.setdefault(number, (title, []))[1].append(status)
    for number in sorted(merged):
        title, statuses = merged[number]
        status = next((s for s in ("FAIL", "SKIP") if s in statuses), "PASS")
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(params=[b for b in kernels.BACKENDS if b != "numba" or kernels.HAS_NUMBA])
def backend(request):
    """Run a test once per available kernel backend."""
    old = kernels.get_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(old)
