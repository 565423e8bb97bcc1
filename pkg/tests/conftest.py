import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")

ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def report_criterion():
    """Record a one-line verdict for an acceptance criterion."""

    def record(label: str, passed: bool, detail: str):
        line = f"criterion {label}: {'PASS' if passed else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES[label] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")

    def key(label):
        num = "".join(ch for ch in label if ch.isdigit())
        return (int(num or 0), label)

    for label in sorted(ACCEPTANCE_LINES, key=key):
        terminalreporter.write_line(ACCEPTANCE_LINES[label])
