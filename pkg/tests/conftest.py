import numpy as np
import pytest
from threadpoolctl import threadpool_limits

# single-threaded BLAS keeps every reduction order, hence every result, fixed
_limits = threadpool_limits(limits=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
