import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(capsys):
    """Record one PASS/FAIL line per acceptance criterion; echoed live and in the summary."""

    def record(number, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _output_dir(tmp_path, monkeypatch):
    """CLI runs without --out write under a temporary directory."""
    monkeypatch.setenv("FFF_OUTPUT_DIR", str(tmp_path / "fff-runs"))
