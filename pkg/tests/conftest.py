import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_acceptance: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid, text): acceptance criterion id and summary")


def pytest_runtest_logreport(report):
    if not (report.when == "call" or (report.when == "setup" and report.failed)):
        return
    marker = _markers.get(report.nodeid)
    if marker is None:
        return
    cid, text = marker
    entry = _acceptance.setdefault(cid, [text, True])
    entry[1] = entry[1] and report.outcome == "passed"


_markers: dict[str, tuple[str, str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            _markers[item.nodeid] = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_acceptance, key=lambda c: int(c.lstrip("AC"))):
        text, ok = _acceptance[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {cid}  {text}")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(20250)
