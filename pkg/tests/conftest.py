import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_results = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "acceptance" not in props:
        return
    number, title = props["acceptance"]
    failed = report.failed or (report.when == "call" and not report.passed)
    prev = _results.get(number, (title, True))
    _results[number] = (title, prev[1] and not failed)


@pytest.fixture(autouse=True)
def _tag_acceptance(request):
    marker = request.node.get_closest_marker("acceptance")
    if marker is not None:
        request.node.user_properties.append(("acceptance", marker.args))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, ok = _results[number]
        terminalreporter.write_line(f"ACCEPTANCE {number:2d} {title}: {'PASS' if ok else 'FAIL'}")
