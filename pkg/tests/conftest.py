import pytest

_criteria: dict[str, tuple[str, str]] = {}


@pytest.fixture
def record_criterion(request):
    """Attach a one-line result detail to an acceptance test."""
    def _record(detail):
        request.node.user_properties.append(("criterion_detail", detail))
    return _record


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or "test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("criterion_detail", "")
        _criteria[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        status, detail = _criteria[name]
        number = name.split("_")[2]
        terminalreporter.write_line(f"criterion {int(number):2d}: {status}  {detail}")
