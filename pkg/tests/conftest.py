import json
import pathlib

import pytest

from thresholdlab.model import PairPotential

HERE = pathlib.Path(__file__).parent


@pytest.fixture(scope="session")
def oracles():
    """Frozen values from independent methods (see ``tests/oracles/generate.py``)."""
    return json.loads((HERE / "oracles" / "values.json").read_text())


@pytest.fixture(scope="session")
def gaussian():
    return PairPotential("gaussian", -1.0, 1.0)


@pytest.fixture(scope="session")
def square_well():
    return PairPotential("square-well", -1.0, 1.0)


@pytest.fixture(scope="session")
def mixed():
    """Repulsive core with an attractive tail."""
    return PairPotential("gaussian-sum", 1.0, 1.0, ((2.0, 0.7), (-1.5, 1.4)))


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion.

    Usage: ``criterion(number, title, checks)`` with ``checks`` a list of
    ``(description, passed)`` pairs; the test then asserts every check.
    """
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number, title, checks):
        failed = [desc for desc, ok in checks if not ok]
        line = f"criterion {number:>2} {'PASS' if not failed else 'FAIL'}: {title}"
        if failed:
            line += " -- failed: " + "; ".join(failed)
        store[number] = line
        print(line)
        assert not failed, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(ACCEPTANCE, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
