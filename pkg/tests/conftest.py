"""Per-criterion pass/fail lines for the acceptance suite.

Tests carry ``@pytest.mark.criterion(k)`` and may attach a ``detail``
property; after the run one line per criterion is printed.
"""
from collections import defaultdict

import pytest

_OUTCOMES: dict[int, list[tuple[str, bool, str]]] = defaultdict(list)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    # a failing setup counts as a failure; otherwise the call phase decides
    if report.when == "call" or (report.when == "setup" and not report.passed):
        details = [str(v) for k, v in item.user_properties if k == "detail"]
        _OUTCOMES[marker.args[0]].append((item.name, report.passed, "; ".join(details)))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_OUTCOMES):
        runs = _OUTCOMES[k]
        ok = all(passed for _, passed, _ in runs)
        if len(runs) == 1:
            detail = runs[0][2]
        else:
            failed = [f"{name} ({d})" if d else name for name, passed, d in runs if not passed]
            detail = f"{len(runs) - len(failed)}/{len(runs)} cases pass"
            if failed:
                detail += "; failing: " + "; ".join(failed)
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
