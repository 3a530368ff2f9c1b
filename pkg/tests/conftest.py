import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mdf.config import packaged
from mdf.data import ClassProfile, ShiftParams, generate

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled in by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_bundle():
    """300 pairs, tail classes of 1-2 members; quick enough for training tests."""
    return generate(ClassProfile(total=300), ShiftParams(), seed=3,
                    val_per_class=6, test_per_class=6, unlabeled_per_class=8)


@pytest.fixture(scope="session")
def smoke_config():
    return packaged("smoke")


@pytest.fixture(scope="session")
def smoke_train(smoke_config):
    return smoke_config.train
