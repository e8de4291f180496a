import json
import pathlib
import sys

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from lqgcap import CostWeights, ProblemConstants, SystemModel

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def s1():
    return SystemModel(F=0.5, G=1, H=1, J=1, W=1, V=1, L=0)


@pytest.fixture(scope="session")
def w1():
    return CostWeights(Q=1, R=1)


@pytest.fixture(scope="session")
def c1(s1, w1):
    return ProblemConstants.compute(s1, w1)


@pytest.fixture(scope="session")
def s2():
    return SystemModel(F=np.diag([1.2, 0.7, 0.5]), G=[[2], [1], [12]],
                       H=[[10, 2, 1]], J=1, W=np.eye(3), V=4,
                       L=np.zeros((3, 1)))


@pytest.fixture(scope="session")
def w2():
    return CostWeights(Q=np.eye(3), R=1)


@pytest.fixture(scope="session")
def c2(s2, w2):
    return ProblemConstants.compute(s2, w2)


@pytest.fixture(scope="session")
def s1_oracle():
    with open(FIXTURES / "s1_rate_oracle.json") as fh:
        return {float(k): v for k, v in json.load(fh).items()}


@pytest.fixture(scope="session")
def state_feedback_model():
    """Scalar model with G = K_p J: the observer reconstructs the estimate,
    collapsing SigmaHat to zero (here also Sigma = 0 since v = w)."""
    return SystemModel(F=0.5, G=1, H=1, J=1, W=1, V=1, L=1)
