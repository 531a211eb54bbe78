import json
from pathlib import Path

import numpy as np
import pytest

from logitmd.network import load_network

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "logitmd" / "fixtures"

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def fixture_doc(name):
    return json.loads((FIXTURES / name).read_text())


@pytest.fixture(scope="session")
def pigou():
    return load_network(FIXTURES / "pigou.json")


@pytest.fixture(scope="session")
def braess():
    return load_network(FIXTURES / "braess.json")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_feasible(net, rng, size=None):
    """Interior points drawn from a Dirichlet per OD block."""
    rows = []
    for _ in range(1 if size is None else size):
        x = np.empty(net.n_paths)
        for j, sl in enumerate(net.block_slices):
            x[sl] = rng.dirichlet(np.ones(sl.stop - sl.start)) * net.demands[j]
        rows.append(x)
    return rows[0] if size is None else np.array(rows)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
