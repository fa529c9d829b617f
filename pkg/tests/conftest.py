from pathlib import Path

import numpy as np
import pytest

from qucircle import fixture_path
from qucircle.grid import import_simbench, load_grid_file

GRID_FIXTURES = ("toy_feeder", "single_der", "meshed_feeder")
SIMBENCH_DIR = Path(str(fixture_path("simbench_excerpt")))
SIMBENCH_FILES = ("Node.csv", "Line.csv", "Transformer.csv", "Load.csv", "RES.csv")


def load_fixture(name):
    return load_grid_file(fixture_path(f"{name}.json"))


def simbench_tables():
    return [(SIMBENCH_DIR / f).read_text() for f in SIMBENCH_FILES]


def load_simbench():
    return import_simbench(*simbench_tables())


def all_fixture_grids():
    return {**{n: load_fixture(n) for n in GRID_FIXTURES}, "simbench_excerpt": load_simbench()}


@pytest.fixture
def toy():
    return load_fixture("toy_feeder")


@pytest.fixture
def single():
    return load_fixture("single_der")


@pytest.fixture
def meshed():
    return load_fixture("meshed_feeder")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record a criterion outcome, print it, and fail the test if it did not hold."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
