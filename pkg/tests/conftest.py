import numpy as np
import pytest

from ltslf.mesh import build_lshape_mesh, default_threshold, partition_fine, refine_corner


@pytest.fixture(scope="session")
def lshape_refined():
    """Initial L-shape (h_init = 1/8) after two corner refinements, untagged."""
    mesh = build_lshape_mesh(0.125)
    for _ in range(2):
        mesh = refine_corner(mesh)
    return mesh


@pytest.fixture(scope="session")
def lshape_tagged(lshape_refined):
    return partition_fine(lshape_refined, default_threshold(lshape_refined), 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
