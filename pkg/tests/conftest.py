"""Acceptance bookkeeping: one pass/fail line per criterion in the terminal summary."""

import pytest

ACCEPTANCE: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def note(request):
    """Attach a measured-value summary to the current criterion's report line."""
    marker = request.node.get_closest_marker("criterion")

    def _note(text: str) -> None:
        ACCEPTANCE.setdefault(marker.args[0], {})["detail"] = text
        print(f"criterion {marker.args[0]}: {text}")

    return _note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    entry = ACCEPTANCE.setdefault(marker.args[0], {})
    entry["passed"] = rep.passed
    entry["name"] = item.name


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        e = ACCEPTANCE[n]
        status = "PASS" if e.get("passed") else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {e.get('name', '')}  {e.get('detail', '')}")
