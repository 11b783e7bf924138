import pytest

_RESULTS: list[str] = []


@pytest.fixture(scope="session")
def accept():
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(line)
        _RESULTS.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_RESULTS):
            terminalreporter.write_line(line)
