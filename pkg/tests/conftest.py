import datetime as dt

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jitcast.data import DailySeries, build_feature_frame
from jitcast.transformer import ModelConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def tiny_config():
    return ModelConfig(d_model=8, n_heads=2, d_ff=16, n_encoder_layers=1, n_decoder_layers=1,
                       zero_init_head=False)


def seasonal_series(n_days=400, start=dt.date(2021, 1, 4), noise=0.0, seed=0):
    t = np.arange(n_days)
    values = 1.0 + 0.3 * np.sin(2 * np.pi * t / 365.0) + 0.1 * (t % 7 >= 5)
    if noise:
        values = values + np.random.default_rng(seed).normal(0, noise, n_days)
    return DailySeries("s", start, values)


@pytest.fixture
def frame():
    return build_feature_frame(seasonal_series(200))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and fail the test if it did not pass."""

    def record(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
