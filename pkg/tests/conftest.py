import numpy as np
import pytest
from hypothesis import settings

from iscc.config import SystemConfig

settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, name: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion:2d} {name}: {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def cfg():
    return SystemConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
