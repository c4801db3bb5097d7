import json

import numpy as np
import pytest

from surplusopt.graph import build_surplus_matrix, ring
from surplusopt.protocol import ProtocolParams


@pytest.fixture
def two_cycle():
    return ring(2, 0.4)


@pytest.fixture
def two_cycle_params():
    return ProtocolParams(T=0.5, epsilon=0.1)


@pytest.fixture
def two_cycle_B(two_cycle):
    return build_surplus_matrix(two_cycle)


@pytest.fixture
def write_config(tmp_path):
    def _write(data, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path
    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
