import numpy as np
import pytest

from chainless.lattice import build_hierarchy
from chainless.model import ising_couplings


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def oracle_lattice():
    """4x4 Ising at T=2.2 with a base small enough to refine."""
    hier = build_hierarchy(2, 4, base_size=4)
    return hier, ising_couplings(hier.geom, 2.2)


def random_spins(rng, n_samples, n_sites):
    return rng.choice(np.array([-1, 1], dtype=np.int8), size=(n_samples, n_sites))


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
