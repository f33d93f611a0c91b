import numpy as np
import pandas as pd
import pytest

from imputedid import AdoptionSchedule, BootstrapPlan, ObservationTable, estimate_twfe, selection_test, trend_test
from imputedid.errors import DegenerateOutcome, MissingColumn, SingleYear


def test_tiny_twfe_equals_double_difference(tiny):
    table, schedule = tiny
    assert estimate_twfe(table, schedule).att == pytest.approx(3.0, abs=1e-12)


def test_zero_outcome(tiny):
    table, schedule = tiny
    assert estimate_twfe(table.with_outcome(np.zeros(4)), schedule).att == pytest.approx(0.0)


def test_interactions_and_bootstrap(parallel_panel):
    table, schedule, _ = parallel_panel
    table = ObservationTable.from_arrays(
        group=table.group, time=table.time, outcome=table.outcome, cluster=table.group,
        subgroups={"half": np.where(np.arange(table.n) % 2 == 0, "even", "odd")})
    rep = estimate_twfe(table, schedule, interactions=["half"], plan=BootstrapPlan(20, seed=1))
    coefs = rep.to_dict()["coefficients"]
    assert "treat_after x half=odd" in coefs
    assert coefs["treat_after"]["se"] > 0


def _trend_panel(slope_t, slope_c, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    g = np.repeat(np.arange(6), 10)
    t = np.tile(np.arange(2000, 2010), 6)
    treated = g >= 3
    y = np.where(treated, slope_t, slope_c) * t + g + noise * rng.normal(size=g.size)
    table = ObservationTable.from_arrays(group=g, time=t, outcome=y)
    return table, AdoptionSchedule({3: 2008, 4: 2008, 5: 2009})


@pytest.mark.parametrize("st_, sc, expected", [(0.017, 0.017, 0.0), (0.03, 0.01, 0.02)])
def test_trend_slope(st_, sc, expected):
    table, sched = _trend_panel(st_, sc)
    rep = trend_test(table, sched, se="robust")
    assert rep.att == pytest.approx(expected, abs=1e-9)
    assert rep.diagnostics["cutoff"] == 2008


def test_trend_test_single_year():
    table, sched = _trend_panel(0.0, 0.0)
    with pytest.raises(SingleYear):
        trend_test(table, sched, cutoff=2001)


def test_trend_bootstrap_se():
    table, sched = _trend_panel(0.02, 0.01, noise=0.1)
    rep = trend_test(table, sched, se="bootstrap", plan=BootstrapPlan(50, seed=2))
    assert rep.se > 0 and rep.bootstrap_iterations == 50


def test_selection_planted():
    base = np.linspace(-1, 1, 40)
    frame = pd.DataFrame({"adopt": (base > np.median(base)).astype(int), "hfa": base})
    rep = selection_test(frame, adoption="adopt", baseline="hfa")
    assert rep.att > 0 and rep.extra["p_value"] < 0.01


def test_selection_errors():
    frame = pd.DataFrame({"adopt": [1, 1, 1], "hfa": [0.1, 0.2, 0.3]})
    with pytest.raises(DegenerateOutcome):
        selection_test(frame, adoption="adopt", baseline="hfa")
    with pytest.raises(MissingColumn):
        selection_test(frame, adoption="adopt", baseline="nope")


def test_selection_size_under_independence():
    # HC1 undercovers slightly with few districts, so use a moderate count
    hits, reps = 0, 1000
    for r in range(reps):
        rng = np.random.default_rng(r)
        frame = pd.DataFrame({"adopt": rng.integers(0, 2, 200), "hfa": rng.normal(size=200)})
        rep = selection_test(frame, adoption="adopt", baseline="hfa")
        hits += abs(rep.att) <= 2 * rep.se
    assert hits / reps >= 0.93
