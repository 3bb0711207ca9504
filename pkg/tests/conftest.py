import numpy as np
import pytest

from hmfstrat.geometry import SpaceTimePoint


@pytest.fixture
def origin3():
    return SpaceTimePoint((0.0, 0.0, 0.0), 0.0)


def cone_values(x):
    """Closed form of x/|x| used as an independent oracle."""
    x = np.asarray(x, dtype=float)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


@pytest.fixture(scope="session")
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion and fail on any broken check."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, title: str, checks: list[tuple[str, bool]], seconds: float):
        failed = [name for name, ok in checks if not ok]
        status = "FAIL" if failed else "PASS"
        line = f"criterion {number} [{status}] {title} ({seconds:.1f} s)"
        if failed:
            line += ": " + "; ".join(failed)
        lines.append((number, line))
        print(line)
        assert not failed, line

    return record


_VERDICTS = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
