"""Collects acceptance outcomes and prints one line per criterion at the end
of the run.  A criterion passes only when every test marked with it passes.
"""

import pytest

_OUTCOMES: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        notes = [str(v) for k, v in item.user_properties if k == "measured"]
        _OUTCOMES.setdefault(mark.args[0], []).append((item.name, rep.passed, notes))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_OUTCOMES, key=lambda c: int(c[1:])):
        results = _OUTCOMES[cid]
        ok = all(passed for _, passed, _ in results)
        detail = "; ".join(n for _, _, notes in results for n in notes)
        tr.write_line(f"{cid} {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else ""))
