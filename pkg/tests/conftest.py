import numpy as np
import pytest

from icfl import SIGMOID, draw_eval_set
from icfl.scenarios import init_model, make_teacher


@pytest.fixture(scope="session")
def act():
    return SIGMOID


@pytest.fixture(scope="session")
def es_small():
    """Small quadrature for fast unit tests (d = 8)."""
    return draw_eval_set(101, 512, 8)


@pytest.fixture(scope="session")
def teacher_small(es_small):
    return make_teacher(3, 80, 8, es_small, np.random.default_rng(7))


@pytest.fixture(scope="session")
def model_small():
    return init_model(3, 40, 8, np.random.default_rng(8))


@pytest.fixture(scope="session")
def es_mid():
    """Matched-dimension quadrature at the headline (k=5, d=20) geometry."""
    return draw_eval_set(202, 1024, 20)


@pytest.fixture(scope="session")
def teacher_mid(es_mid):
    return make_teacher(5, 200, 20, es_mid, np.random.default_rng(9))


@pytest.fixture(scope="session")
def model_mid():
    return init_model(5, 100, 20, np.random.default_rng(10))
