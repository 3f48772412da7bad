import pytest

from fairadapt.config import ExperimentConfig
from fairadapt.sim import DGP1, DGP2

ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {name} -- {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def cfg():
    return ExperimentConfig()


@pytest.fixture
def cfg_log():
    return ExperimentConfig(m=5, effect_scale="log_relative_risk")


@pytest.fixture
def dgp1():
    return DGP1


@pytest.fixture
def dgp2():
    return DGP2
