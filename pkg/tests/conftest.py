import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from videoguard.diffusion import AffineDenoiser, MlpDenoiser, PromptEmbedding, make_schedule

settings.register_profile("pkg", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")

SMALL = (3, 4, 4)


@pytest.fixture
def sched():
    return make_schedule(50)


@pytest.fixture
def short_sched():
    return make_schedule(10)


@pytest.fixture
def prompt():
    return PromptEmbedding.from_label("a red car")


@pytest.fixture
def affine_small():
    return AffineDenoiser(SMALL, 10)


@pytest.fixture
def mlp_small():
    return MlpDenoiser(SMALL, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (passed, detail)
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {key}: {detail}")
