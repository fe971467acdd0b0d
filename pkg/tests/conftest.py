import numpy as np
import pytest
from hypothesis import strategies as st

from edgerent import CostParams, Instance, LevelTable


def regime_workload(rng, T, kappa, c_min, c_max):
    """Demand that hovers around break-even so policies switch often."""
    kind = rng.integers(0, 3)
    if kind == 0:
        x = rng.binomial(kappa, rng.uniform(0, 1), T)
    elif kind == 1:
        x = np.zeros(T, dtype=np.int64)
        t = 0
        while t < T:
            n = int(rng.integers(1, 60))
            if rng.random() < 0.5:
                x[t : t + n] = kappa
            t += n
    else:
        x = rng.integers(0, kappa + 1, T)
    if rng.random() < 0.7:
        c = rng.uniform(c_min, c_max, T)
    else:
        c = np.full(T, rng.uniform(c_min, c_max))
    return Instance(x, c)


def random_two_level(rng, M_range=(2, 50), kappa_range=(1, 5)):
    kappa = int(rng.integers(kappa_range[0], kappa_range[1] + 1))
    M = float(rng.uniform(*M_range))
    c_min = float(rng.uniform(0.02, 0.98) * kappa)
    c_max = float(rng.uniform(c_min, c_min + kappa))
    return CostParams(M, kappa, c_min, c_max)


def random_three_level(rng, kappa=1, M_range=(1.5, 30), intermediate_ok=True):
    alpha = float(rng.uniform(0.05, 0.95))
    if intermediate_ok:
        g = float(rng.uniform(0.01, 0.99) * (1 - alpha))
    else:
        g = float(rng.uniform(1 - alpha, 1) * 0.999 + 0.001 * (1 - alpha))
        g = min(max(g, 1 - alpha), 0.999)
    c_min = float(rng.uniform(0.05, 0.9))
    c_max = float(c_min + rng.uniform(0, 1.5))
    return CostParams(float(rng.uniform(*M_range)), kappa, c_min, c_max, LevelTable.three_level(alpha, g))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@st.composite
def params_and_instance(draw, max_T=12, levels=2, kappa_max=3):
    kappa = draw(st.integers(1, kappa_max))
    M = draw(st.floats(1.01, 20))
    c_min = draw(st.floats(0.01, 2))
    c_max = draw(st.floats(c_min, c_min + 3))
    if levels == 3:
        alpha = draw(st.floats(0.05, 0.95))
        g = draw(st.floats(0.01, 0.99))
        table = LevelTable.three_level(alpha, g)
    else:
        table = LevelTable.two_level()
    T = draw(st.integers(1, max_T))
    x = draw(st.lists(st.integers(0, kappa + 2), min_size=T, max_size=T))
    c = draw(st.lists(st.floats(c_min, c_max), min_size=T, max_size=T))
    return CostParams(M, kappa, c_min, c_max, table), Instance(x, c)
