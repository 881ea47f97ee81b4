import pytest

from levysmooth import dsl
from levysmooth.model import BoxSet, JumpModel, NuComponent


@pytest.fixture
def atom_model():
    """One atom of mass 2 at x = 1 and a negative uniform piece; E N(A) = 2."""
    return JumpModel(0.0, 1.0, (NuComponent.atom(1.0, 2.0), NuComponent.uniform(-2.0, -0.5, 1.0)))


@pytest.fixture
def A():
    return BoxSet.of((0, 1, 0.5, 1.5))


@pytest.fixture
def env(atom_model, A):
    return dsl.Env(atom_model, {"A": A, "B": BoxSet.of((0, 1, -3, 0))})


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
