import numpy as np
import pytest

from opsize.algebra import ChainSpec, DenseOperator
from opsize.selftest import random_traceless

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_traceless():
    return random_traceless


def random_hermitian(chain: ChainSpec, rng) -> DenseOperator:
    D = chain.dim
    g = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    return DenseOperator(chain, (g + g.conj().T) / 2)


@pytest.fixture
def make_hermitian():
    return random_hermitian


@pytest.fixture
def acceptance_report():
    def report(criterion: int, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion:>2}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
