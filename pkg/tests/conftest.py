import numpy as np
import pytest
from hypothesis import settings, strategies as st

from eigen_nas.genome import TensorShape, new_seed_genome
from eigen_nas.mutation import mutate_child

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

SHAPES = [TensorShape(3, 32, 32), TensorShape(1, 8, 8), TensorShape(3, 7, 5)]


@st.composite
def genomes(draw, max_m: int = 30):
    """Random valid genomes: a seeded mutation walk from a seed genome."""
    shape = draw(st.sampled_from(SHAPES))
    seed = draw(st.integers(0, 2**32 - 1))
    m = draw(st.integers(1, max_m))
    return mutate_child(new_seed_genome(shape, 10), m, np.random.default_rng(seed))


@pytest.fixture(scope="session")
def digits():
    from eigen_nas.evaluation.datasets import load_digits
    return load_digits()


@pytest.fixture(scope="session")
def separable():
    from eigen_nas.evaluation.datasets import make_separable
    return make_separable(seed=0)


# one line per acceptance criterion, echoed at the end of the session
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
