from __future__ import annotations

import pytest

_OUTCOMES: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one numbered acceptance criterion")


@pytest.fixture
def detail(request):
    """Callable that attaches a one-line measurement summary to the PASS/FAIL line."""

    def put(text: str) -> None:
        request.node.user_properties.append(("detail", text))

    return put


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    notes = "; ".join(v for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _OUTCOMES[number] = (status, title, notes)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        status, title, notes = _OUTCOMES[number]
        line = f"{status} criterion {number}: {title}"
        terminalreporter.write_line(f"{line} [{notes}]" if notes else line)
