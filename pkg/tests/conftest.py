import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from confdim.metric_spaces import generate_cantor, generate_carpet, generate_grid
from confdim.nets_filling import attach_tree, build_graph, build_nets, resample_graph

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=100)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def grid33():
    return generate_grid(33)


@pytest.fixture(scope="session")
def grid_graph(grid33):
    return build_graph(build_nets(grid33, 2.0, 4), 7.0)


@pytest.fixture(scope="session")
def cantor8():
    return generate_cantor(8)


@pytest.fixture(scope="session")
def carpet2():
    return generate_carpet(2)


@pytest.fixture(scope="session")
def cantor_tree(cantor8):
    return attach_tree(resample_graph(build_nets(cantor8, 3.0, 8), 4, 7.0))


@pytest.fixture(scope="session")
def carpet_tree(carpet2):
    return attach_tree(resample_graph(build_nets(carpet2, 2.0, 4), 2, 7.0))


@pytest.fixture(scope="session")
def cantor_ws(cantor_tree):
    from confdim.weight_pipeline import run_pipeline
    return run_pipeline(cantor_tree, 1.0)


@pytest.fixture(scope="session")
def carpet_ws(carpet_tree):
    from confdim.weight_pipeline import run_pipeline
    return run_pipeline(carpet_tree, 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from _report import lines
    out = lines()
    if out:
        terminalreporter.section("acceptance criteria")
        for line in out:
            terminalreporter.write_line(line)
