import pytest

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "passed": True, "seen": False})
    if rep.when == "call":
        entry["seen"] = True
    if rep.failed or (rep.when == "call" and rep.skipped):
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        ok = e["passed"] and e["seen"]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {e['title']}")
