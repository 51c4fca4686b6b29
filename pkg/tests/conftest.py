import numpy as np
import pytest

from gpmm.model import make_parameters, benchmark_parameters

from oracles import random_spd


@pytest.fixture
def params():
    return benchmark_parameters()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(rng, p=None, q=None, r=None, offsets=True):
    q = q or int(rng.integers(1, 4))
    p = p or int(rng.integers(1, 4))
    r = r or int(rng.integers(1, min(p, q) + 1))
    u = rng.standard_normal((p, r))
    v = rng.standard_normal((q, r))
    w = rng.uniform(0.05, 0.95, r)
    c_y = rng.standard_normal(p) if offsets else None
    c_x = rng.standard_normal(q) if offsets else None
    return make_parameters(u, v, w, random_spd(rng, p), random_spd(rng, q), c_y, c_x)


@pytest.fixture
def make_random_params():
    return random_params


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
