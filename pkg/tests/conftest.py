import pytest

_outcomes: dict[int, list[tuple[str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        ok = rep.passed and not hasattr(rep, "wasxfail")
        _outcomes.setdefault(mark.args[0], []).append((item.name, "PASS" if ok else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        checks = _outcomes[n]
        verdict = "PASS" if all(v == "PASS" for _, v in checks) else "FAIL"
        failing = [name for name, v in checks if v != "PASS"]
        detail = f" (failing: {', '.join(failing)})" if failing else ""
        terminalreporter.write_line(f"CRITERION {n}: {verdict}{detail}")
