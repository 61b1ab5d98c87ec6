import numpy as np
import pytest

from optsale.gbm import solve_gbm
from optsale.model import GbmParams, ProblemSpec, UtilitySpec, XouParams
from optsale.xou import solve_xou

R = 0.02
GBM = GbmParams(0.05, 0.2)
GBM_LOW = GbmParams(0.01, 0.2)
XOU = XouParams(0.6, 1.0, 0.2)


def make_cases():
    return {
        "gbm_exp": ProblemSpec(GBM, UtilitySpec.exponential(0.5), R),
        "gbm_log": ProblemSpec(GBM, UtilitySpec.log(), R),
        "gbm_log_low": ProblemSpec(GBM_LOW, UtilitySpec.log(), R),
        "xou_exp": ProblemSpec(XOU, UtilitySpec.exponential(0.5), R),
        "xou_power": ProblemSpec(XOU, UtilitySpec.power(0.3), R),
        "xou_log": ProblemSpec(XOU, UtilitySpec.log(), R),
    }


CASES = make_cases()


def solve_any(problem):
    return solve_gbm(problem) if problem.is_gbm else solve_xou(problem)


@pytest.fixture(scope="session")
def solutions():
    return {k: solve_any(p) for k, p in CASES.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
