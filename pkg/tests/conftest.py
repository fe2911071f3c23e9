import numpy as np
import pytest

from arraydps.acoustics import SceneSpec, make_fixture


def real_inner(a, b) -> float:
    return float(np.real(np.vdot(a, b)))


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_fixture():
    return make_fixture(SceneSpec(n_sources=2, n_mics=2, length=4096, rir_length=400, rng_seed=11))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import SUMMARY
    except ImportError:
        return
    if SUMMARY:
        terminalreporter.section("acceptance criteria")
        for line in SUMMARY:
            terminalreporter.write_line(line)
