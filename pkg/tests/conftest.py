import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gbwm.market_data import ReturnSeries

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parents[1]


def make_series(returns, start=(1990, 1)) -> ReturnSeries:
    returns = np.asarray(returns, dtype=np.float64)
    base = start[0] * 12 + start[1] - 1
    idx = base + np.arange(len(returns))
    months = np.column_stack([idx // 12, idx % 12 + 1])
    return ReturnSeries(months, returns[:, 0], returns[:, 1])


@pytest.fixture
def toy_series():
    rng = np.random.default_rng(3)
    r = np.column_stack([rng.normal(0.003, 0.01, 400), rng.normal(0.008, 0.045, 400)])
    return make_series(r)


@pytest.fixture(scope="session")
def synthetic_path():
    return ROOT / "data" / "synthetic_monthly.csv"


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one summary line per acceptance criterion: ``criterion(n, ok, detail)``."""

    def record(n: int, ok: bool | None, detail: str) -> None:
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        _ACCEPTANCE[n] = f"criterion {n}: {status}  {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
