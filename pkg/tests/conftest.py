"""Shared test plumbing: records acceptance-criterion outcomes and prints
them as a terminal summary section regardless of output capture."""

_acceptance_results: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    _acceptance_results.append(f"ACCEPTANCE {number:02d}: {status} - {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_acceptance_results):
        terminalreporter.write_line(line)
