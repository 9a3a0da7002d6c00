import numpy as np
import pytest

from graphfl.task import generate_synthetic
from graphfl.topology import GraphSpec, build_combination_matrix


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(4, 6, 12, 2, seed=3)


@pytest.fixture(scope="session")
def ring4():
    return build_combination_matrix(GraphSpec.ring(4))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``report(name, passed, detail)`` prints one PASS/FAIL line and returns ``passed``."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def report(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        print(line)
        lines.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
