import numpy as np
import pytest

from katolab import generators, heat


@pytest.fixture(scope="session")
def torus16():
    return generators.generate_space("flat_torus", N=16)


@pytest.fixture(scope="session")
def torus16_handle(torus16):
    return heat.heat_handle(torus16)


@pytest.fixture(scope="session")
def sphere2():
    return generators.generate_space("icosphere", level=2)


@pytest.fixture(scope="session")
def sphere2_handle(sphere2):
    return heat.heat_handle(sphere2)


@pytest.fixture(scope="session")
def cycle20():
    return generators.cycle(20)


@pytest.fixture(scope="session")
def cycle20_handle(cycle20):
    return heat.heat_handle(cycle20)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    # one pass/fail line per acceptance criterion, in order
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
