import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from imputedid import AdoptionSchedule, ObservationTable, generate, preset

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def tiny():
    """Two groups, two periods; B adopts in period 2."""
    table = ObservationTable.from_arrays(
        group=["A", "A", "B", "B"], time=[1, 2, 1, 2], outcome=[1.0, 2.0, 3.0, 7.0])
    return table, AdoptionSchedule({"B": 2})


@pytest.fixture
def tiny_csv(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("g,t,y,e\nA,1,1,\nA,2,2,\nB,1,3,2\nB,2,7,2\n")
    return path


@pytest.fixture(scope="session")
def parallel_panel():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return generate(preset("parallel", seed=11))


@pytest.fixture(scope="session")
def noiseless_subgroup_panel():
    return generate(preset("subgroup_effect", seed=5, noise_sd=0.0,
                           subgroup_multipliers=(1.0, 0.5)))


def random_panel(rng: np.random.Generator, n_groups=6, n_periods=6, per_cell=2,
                 never=2, noise=1.0):
    """Small random staggered panel used by property tests."""
    groups, times, ys = [], [], []
    alpha = rng.normal(size=n_groups)
    beta = rng.normal(size=n_periods)
    for g in range(n_groups):
        for t in range(n_periods):
            for _ in range(per_cell):
                groups.append(f"g{g}")
                times.append(t + 1)
                ys.append(alpha[g] + beta[t] + noise * rng.normal())
    adoption = {f"g{g}": int(rng.integers(2, n_periods + 1)) for g in range(never, n_groups)}
    table = ObservationTable.from_arrays(group=groups, time=times, outcome=ys)
    return table, AdoptionSchedule(adoption)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
