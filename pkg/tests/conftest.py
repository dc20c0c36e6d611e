import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from einv.bench import behavior_policy
from einv.synth import EnvParams, ScmConfig, sample_dataset

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def two_env_scm():
    return ScmConfig(
        "example1_linear",
        {"0": EnvParams(1.0, -0.5, 1.5, 0.5), "1": EnvParams(-1.0, 1.0, 0.5, -0.5)},
    )


@pytest.fixture
def two_env_data(two_env_scm):
    return sample_dataset(two_env_scm, None, 1000, behavior_policy(), seed=3)


def make_dataset(env, x, t, y, p=None):
    from einv.data import Dataset

    return Dataset.from_arrays(env, np.asarray(x, dtype=float), t, y, p_obs=p)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
