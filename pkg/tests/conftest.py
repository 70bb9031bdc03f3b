import numpy as np
import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def acceptance_log():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def log(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{criterion}: {'PASS' if ok else 'FAIL'} {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
