import pytest

_ACCEPTANCE_LINES = []


def record_criterion(tag: str, ok: bool, detail: str) -> None:
    _ACCEPTANCE_LINES.append((tag, ok, detail))


@pytest.fixture(scope="session")
def acceptance_report():
    return record_criterion


@pytest.hookimpl
def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for tag, ok, detail in sorted(_ACCEPTANCE_LINES):
            verdict = "PASS" if ok else "FAIL"
            terminalreporter.write_line(f"{tag} {verdict} - {detail}")
