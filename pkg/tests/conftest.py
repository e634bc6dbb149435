import numpy as np
import pytest
import scipy.linalg
from hypothesis import settings

from bidirq.krein import BlockOperator, KreinSignature, random_pseudo_hermitian

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def dense_eta(sig):
    return np.diag(sig.signs)


def random_pseudounitary(sig, rng, s=None):
    H = random_pseudo_hermitian(sig, rng)
    s = rng.uniform(0, 2) if s is None else s
    return BlockOperator(scipy.linalg.expm(-1j * s * H.data), sig), H


def random_state(sig, rng):
    return rng.normal(size=sig.n) + 1j * rng.normal(size=sig.n)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture
def sig42():
    return KreinSignature(4, 2)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
