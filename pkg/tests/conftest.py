"""Per-criterion pass/fail summary for the acceptance suite.

Tests marked ``@pytest.mark.criterion(n)`` are grouped by ``n``; a criterion
passes when every test in its group passes. Details recorded with
``record_property("detail", text)`` are printed under the verdict line.
"""

from collections import defaultdict

import pytest

_RESULTS = defaultdict(list)
_DETAILS = defaultdict(list)
_TITLES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and short title")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))
            if len(m.args) > 1:
                _TITLES[m.args[0]] = m.args[1]


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    n = props.get("criterion")
    if n is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _RESULTS[n].append(report.outcome)
    if report.when == "call":
        _DETAILS[n].extend(v for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        outcomes = _RESULTS[n]
        verdict = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        tr.write_line(f"criterion {n:2d}: {verdict}  {_TITLES.get(n, '')}")
        for d in _DETAILS[n]:
            tr.write_line(f"              {d}")


@pytest.fixture
def detail(record_property):
    """Record one line of measured values for the summary."""
    return lambda text: record_property("detail", text)
