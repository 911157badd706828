import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from glassoformer_lab.data import DataSpec, build_dataset
from glassoformer_lab.model import GLassoformer, ModelConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TOY_DATA = DataSpec(seq_len=16, t_f=4, fault_onset=1, sample_rate=2.0)
TOY_MODEL = ModelConfig(n_signals=5, seq_len=16, t_f=4, d_model=8, n_heads=2, enc_layers=2, dec_layers=1)


@pytest.fixture(scope="session")
def toy_dataset():
    return build_dataset(TOY_DATA, 20, seed=3)


@pytest.fixture
def toy_model():
    return GLassoformer.init(TOY_MODEL, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance outcomes, printed as one PASS/FAIL line each at the end of the run.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
