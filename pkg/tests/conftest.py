import pytest

# One line per acceptance criterion, echoed at the end of the session so
# the pass/fail record survives pytest's output capture.
CRITERION_LINES: list[str] = []


def record_criterion(number: int, description: str, passed: bool,
                     detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    suffix = f" [{detail}]" if detail else ""
    line = f"criterion {number}: {status} - {description}{suffix}"
    CRITERION_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(CRITERION_LINES):
        terminalreporter.write_line(line)
