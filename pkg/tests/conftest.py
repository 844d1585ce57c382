import numpy as np
import pytest

from qcreset import build_ladder, table1_params


@pytest.fixture(scope="session")
def params():
    return table1_params()


@pytest.fixture(scope="session")
def params_table_n():
    return table1_params(occupations="table")


@pytest.fixture(scope="session")
def ladder10(params):
    return build_ladder(10, params)


@pytest.fixture(scope="session")
def ladder10_on(params):
    return build_ladder(10, params, "on")


@pytest.fixture(scope="session")
def ladder4(params):
    return build_ladder(4, params)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
