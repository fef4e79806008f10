import numpy as np
import pytest

from horizonlab.limits import HorizonSequence
from horizonlab.problems import builtin_problem
from horizonlab.value import GridSpec, ValueCache

LN2 = np.log(2.0)
# closed forms for the 1-D L1 example: V^T(0,b) = b e^-T - 1/2 - b + ln2/2
# for T > 1, full limit -b + (ln2-1)/2, unconstrained-liminf value -b
V_ALL_CONST = (LN2 - 1.0) / 2.0


def v_truncated(b, T):
    return b * np.exp(-T) - 0.5 - b + LN2 / 2


@pytest.fixture(scope="session")
def linear_l1():
    return builtin_problem("linear-l1")


@pytest.fixture(scope="session")
def capital_stock():
    return builtin_problem("capital-stock")


@pytest.fixture(scope="session")
def double_integrator():
    return builtin_problem("double-integrator")


@pytest.fixture(scope="session")
def acc_spec():
    """The acceptance lattice: box [-3, 3], h = dt = 0.01."""
    return GridSpec(lo=[-3.0], hi=[3.0], h=0.01, dt=0.01, horizon=2.0)


@pytest.fixture(scope="session")
def acc_horizons():
    return HorizonSequence(np.array([2.0, 4.0, 8.0, 16.0]))


@pytest.fixture(scope="session")
def shared_cache():
    """One solve cache for the whole session; grids are immutable."""
    return ValueCache()


@pytest.fixture(scope="session")
def acc_grid_T2(linear_l1, acc_spec, shared_cache):
    return shared_cache.solve(linear_l1, acc_spec)
