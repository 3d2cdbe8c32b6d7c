from __future__ import annotations

import numpy as np
import pytest

from npthresh.estimators import Sample
from npthresh.kernels import KernelConfig, WeightBox

ACCEPTANCE_LINES: list[str] = []


def random_sample(seed: int, n: int, heterosked: bool = True) -> Sample:
    rng = np.random.default_rng(seed)
    q = rng.normal(size=n)
    x = 0.5 * q + rng.normal(size=n)
    noise = rng.normal(size=n) * (np.exp(-0.2 * x * x) if heterosked else 1.0)
    y = np.sin(x) + 0.5 * (q > 0.3) + noise
    return Sample(y=y, x=x[:, None], q=q)


@pytest.fixture
def small_sample():
    return random_sample(0, 150)


@pytest.fixture
def unit_box():
    return WeightBox((-1.5,), (1.5,))


@pytest.fixture
def config150():
    return KernelConfig.from_rule(150, min_regime_obs=5)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
