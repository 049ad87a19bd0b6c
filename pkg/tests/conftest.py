import numpy as np
import pytest

from selpde.assembly import discretize, make_grid
from selpde.barriers import build_bracket
from selpde.problem import parse_problem_text

MANUFACTURED = "dim = 3\ndomain = ball 1\na = 6 + 4*r^2\nc = 1 - r^2\n"
DECAY_N5 = "dim = 5\ndomain = wholespace\na = (1 + r^2)^(-2)\nc = 0.1 + 1/(1 + r^2)\n"


def problem_from(text):
    return parse_problem_text(text)


@pytest.fixture(scope="session")
def manufactured():
    return problem_from(MANUFACTURED)


@pytest.fixture(scope="session")
def manufactured_disc_257(manufactured):
    return discretize(manufactured, make_grid(manufactured, 257))


@pytest.fixture(scope="session")
def manufactured_bracket_257(manufactured_disc_257):
    return build_bracket(manufactured_disc_257, epsilon=0.1)


def exact_manufactured(r):
    return 1.0 - np.asarray(r) ** 2
